#include "htune/cross_domain.hpp"

#include "htune/errors.hpp"

namespace htune {

namespace {

MetricMap mean_of(const std::vector<const MetricMap*>& cells) {
    MetricMap out;
    if (cells.empty()) return out;
    for (const auto* c : cells)
        for (const auto& [k, v] : *c) out[k] += v;
    for (auto& [k, v] : out) v /= static_cast<double>(cells.size());
    return out;
}

}  // namespace

CrossDomainReport cross_dataset_run(const std::vector<DomainSplit>& domains, const Method& method) {
    if (domains.size() < 2)
        throw ProtocolError("cross-dataset protocol needs at least 2 domains, got " + std::to_string(domains.size()));
    CrossDomainReport r;
    const std::size_t n = domains.size();
    r.cells.assign(n, std::vector<MetricMap>(n));
    for (const auto& d : domains) r.domains.push_back(d.name);
    for (std::size_t i = 0; i < n; ++i) {
        Evaluator eval = method(domains[i]);
        for (std::size_t j = 0; j < n; ++j) r.cells[i][j] = eval(domains[j]);
    }
    std::vector<const MetricMap*> diag, off, all;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            (i == j ? diag : off).push_back(&r.cells[i][j]);
            all.push_back(&r.cells[i][j]);
        }
    r.in_domain = mean_of(diag);
    r.cross_domain = mean_of(off);
    r.overall = mean_of(all);
    return r;
}

void write_cross_domain_csv(std::ostream& out, const CrossDomainReport& r) {
    out << "scope,train,eval,metric,value\n";
    out.precision(10);
    for (std::size_t i = 0; i < r.domains.size(); ++i)
        for (std::size_t j = 0; j < r.domains.size(); ++j)
            for (const auto& [k, v] : r.cells[i][j]) out << "cell," << r.domains[i] << ',' << r.domains[j] << ',' << k << ',' << v << '\n';
    for (const auto& [k, v] : r.in_domain) out << "in-domain,,," << k << ',' << v << '\n';
    for (const auto& [k, v] : r.cross_domain) out << "cross-domain,,," << k << ',' << v << '\n';
    for (const auto& [k, v] : r.overall) out << "overall,,," << k << ',' << v << '\n';
}

}  // namespace htune
