#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace autolc {

using i64 = std::int64_t;
using u64 = std::uint64_t;
using Shape = std::vector<i64>;

inline i64 numel_of(const Shape& s) {
    i64 n = 1;
    for (i64 d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

// Error taxonomy mirrored by the CLI exit codes: ValueError -> usage (1),
// DataError -> data (2), NumericError -> numerical failure (3).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValueError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

#define AUTOLC_CHECK(cond, msg)                       \
    do {                                              \
        if (!(cond)) throw ::autolc::ValueError(msg); \
    } while (0)

// Deterministic RNG. Gaussian draws go through an explicit Box-Muller so the
// stream does not depend on the standard library's normal_distribution.
class Rng {
public:
    explicit Rng(u64 seed) : gen_(seed) {}

    double uniform() {  // [0, 1)
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    i64 uniform_int(i64 lo, i64 hi) {  // inclusive bounds
        if (hi <= lo) return lo;
        u64 span = static_cast<u64>(hi - lo) + 1;
        u64 limit = std::numeric_limits<u64>::max() - std::numeric_limits<u64>::max() % span;
        u64 v = gen_();
        while (v >= limit) v = gen_();
        return lo + static_cast<i64>(v % span);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {  // Fisher-Yates, stream-stable
        for (i64 i = static_cast<i64>(v.size()) - 1; i > 0; --i) {
            i64 j = uniform_int(0, i);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    std::string state() const {
        std::ostringstream os;
        os << gen_ << ' ' << (has_spare_ ? 1 : 0) << ' ';
        os.precision(17);
        os << std::scientific << spare_;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        int flag = 0;
        is >> gen_ >> flag >> spare_;
        if (!is) throw ValueError("invalid rng state string");
        has_spare_ = flag != 0;
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Deterministic data-parallel helper: the range is split into contiguous
// chunks, every output element is owned by exactly one chunk, so results do
// not depend on the thread count.
int max_threads();
void set_max_threads(int n);
void parallel_for(i64 n, const std::function<void(i64, i64)>& fn);

}  // namespace autolc
