#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qpnet {

// Row-major dense matrix. Sequences of per-sample vectors use one row per
// time step, so a row is a contiguous channel vector.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<T> flat() { return data_; }
    std::span<const T> flat() const { return data_; }

    void resize(std::size_t rows, std::size_t cols, T fill = T(0)) {
        rows_ = rows;
        cols_ = cols;
        data_.assign(rows * cols, fill);
    }
    void fill(T v) { data_.assign(data_.size(), v); }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

// Non-owning view over a block of consecutive rows.
template <typename T>
struct RowsView {
    T* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;

    RowsView() = default;
    RowsView(T* d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {}
    template <typename U>
    RowsView(Tensor<U>& t) : data(t.data()), rows(t.rows()), cols(t.cols()) {}
    template <typename U>
    RowsView(const Tensor<U>& t) : data(t.data()), rows(t.rows()), cols(t.cols()) {}
    template <typename U>
    RowsView(const RowsView<U>& v) : data(v.data), rows(v.rows), cols(v.cols) {}

    T* row(std::size_t r) const { return data + r * cols; }
    RowsView slice(std::size_t first, std::size_t count) const { return {data + first * cols, count, cols}; }
};

template <typename T>
using ConstRowsView = RowsView<const T>;

inline void require(bool cond, const std::string& what) {
    if (!cond) throw std::invalid_argument(what);
}

}  // namespace qpnet
