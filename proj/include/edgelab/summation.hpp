#pragma once

#include <cmath>
#include <complex>

namespace edgelab {

// Neumaier's variant of Kahan summation. Results depend only on the order
// of add() calls, so a fixed loop order gives bit-reproducible sums.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::fabs(sum_) >= std::fabs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    CompensatedSum& operator+=(double x) noexcept {
        add(x);
        return *this;
    }
    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

class ComplexCompensatedSum {
public:
    void add(std::complex<double> x) noexcept {
        re_.add(x.real());
        im_.add(x.imag());
    }
    ComplexCompensatedSum& operator+=(std::complex<double> x) noexcept {
        add(x);
        return *this;
    }
    std::complex<double> value() const noexcept { return {re_.value(), im_.value()}; }

private:
    CompensatedSum re_;
    CompensatedSum im_;
};

}  // namespace edgelab
