#pragma once

#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "htune/phantom.hpp"

namespace htune {

struct DomainSplit {
    std::string name;
    std::vector<PhantomSample> data;
    std::vector<std::size_t> train, val, test;
};

using MetricMap = std::map<std::string, double>;
/// Scores a trained model on a target domain.
using Evaluator = std::function<MetricMap(const DomainSplit& target)>;
/// Trains on a source domain and returns the evaluator for the result.
using Method = std::function<Evaluator(const DomainSplit& source)>;

struct CrossDomainReport {
    std::vector<std::string> domains;
    std::vector<std::vector<MetricMap>> cells;  // [train][eval]
    MetricMap in_domain;     // mean of the diagonal
    MetricMap cross_domain;  // mean of the off-diagonal cells
    MetricMap overall;       // mean of all cells
};

/// Leave-one-domain-out: train on each domain, evaluate on every domain.
/// Fewer than two domains is a ProtocolError.
CrossDomainReport cross_dataset_run(const std::vector<DomainSplit>& domains, const Method& method);

/// Rows `scope,train,eval,metric,value`; scope is cell, in-domain,
/// cross-domain or overall.
void write_cross_domain_csv(std::ostream& out, const CrossDomainReport& report);

}  // namespace htune
