#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace featdistill {

// All numerical work happens in double; embeddings are stored as float32.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Malformed or inconsistent input data (bad files, missing metadata, shape mismatches).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values produced or encountered during a computation.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration values.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// 64-bit FNV-1a. Pass a previous result as `basis` to hash incrementally.
constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t basis = kFnvOffsetBasis) noexcept;
std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis = kFnvOffsetBasis) noexcept;

std::string to_hex(std::uint64_t value);

/// Neumaier-compensated running sum; order of `add` calls fixes the result.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    [[nodiscard]] double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population (1/N)
};

MeanStd mean_std(std::span<const double> values);

}  // namespace featdistill
