#pragma once

#include <Eigen/Dense>

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace candida {

// Dense row-major n-d array. Shapes are small, data is flat.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(count(shape)), T(0));
    }
    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != static_cast<size_t>(count(shape)))
            throw std::invalid_argument("tensor: data size does not match shape");
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("tensor: negative dim");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 2-d accessors (rows x cols)
    T& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    const T& at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }
    // 3-d accessors (channels x rows x cols)
    T& at(int ch, int r, int c) {
        return data[(static_cast<size_t>(ch) * shape[1] + r) * shape[2] + c];
    }
    const T& at(int ch, int r, int c) const {
        return data[(static_cast<size_t>(ch) * shape[1] + r) * shape[2] + c];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }

    using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstMatMap =
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    // View the flat buffer as a rows x cols matrix.
    MatMap mat(int rows, int cols) {
        assert(static_cast<int64_t>(rows) * cols == numel());
        return MatMap(data.data(), rows, cols);
    }
    ConstMatMap mat(int rows, int cols) const {
        assert(static_cast<int64_t>(rows) * cols == numel());
        return ConstMatMap(data.data(), rows, cols);
    }
};

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
    assert(a.same_shape(b));
    Tensor<T> r = a;
    for (int64_t i = 0; i < r.numel(); ++i) r[i] += b[i];
    return r;
}

}  // namespace candida
