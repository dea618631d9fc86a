#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace prefmod {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Immutable dense row-major array of doubles. Copies share storage.
// Rank 0 (empty shape) denotes a scalar with one element.
class Tensor {
public:
    Tensor();  // scalar 0
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept { return data_->size(); }

    std::span<const double> data() const noexcept { return {data_->data(), data_->size()}; }
    double operator[](std::size_t i) const noexcept { return (*data_)[i]; }
    // Row-major 2-D accessor.
    double at(std::size_t row, std::size_t col) const;
    double item() const;

    // Same storage, new shape with equal element count.
    Tensor reshaped(Shape shape) const;
    std::vector<double> to_vector() const { return *data_; }

    bool all_finite() const noexcept;

private:
    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
};

// Shape and every bit of every element equal.
bool bitwise_equal(const Tensor& a, const Tensor& b) noexcept;
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace prefmod
