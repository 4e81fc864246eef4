#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace htune {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Extents are strictly positive; a
/// default-constructed tensor is the "undefined" sentinel (no shape, no data).
///
/// All arithmetic runs in 64-bit. Parameters that must survive the 32-bit
/// tensor file format are rounded with round_to_f32().
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
    static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
    static Tensor from(Shape shape, std::initializer_list<double> values);

    bool defined() const noexcept { return !shape_.empty(); }
    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept { return data_.size(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double* ptr() noexcept { return data_.data(); }
    const double* ptr() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Single value of a one-element tensor.
    double item() const;

    bool requires_grad() const noexcept { return requires_grad_; }
    Tensor& set_requires_grad(bool flag) noexcept {
        requires_grad_ = flag;
        return *this;
    }

    Tensor reshaped(Shape shape) const;

    void fill(double v);
    /// this += other (same shape).
    void accumulate(const Tensor& other);
    void round_to_f32();

    bool all_finite() const;
    double max_abs() const;
    double sum() const;

    /// FNV-1a over the raw bytes of shape and data; used for frozen-weight checks.
    std::uint64_t checksum() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
    bool requires_grad_ = false;
};

/// Largest absolute elementwise difference; shapes must agree.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace htune
