#include "autolc/common.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace autolc {

namespace {
std::atomic<int> g_max_threads{0};  // 0 = auto
}

int max_threads() {
    int n = g_max_threads.load();
    if (n > 0) return n;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void set_max_threads(int n) { g_max_threads.store(n < 1 ? 1 : n); }

void parallel_for(i64 n, const std::function<void(i64, i64)>& fn) {
    if (n <= 0) return;
    int nt = max_threads();
    // Small ranges are not worth the thread spawn.
    if (nt <= 1 || n < 4) {
        fn(0, n);
        return;
    }
    nt = static_cast<int>(std::min<i64>(nt, n));
    i64 chunk = (n + nt - 1) / nt;
    std::vector<std::thread> workers;
    workers.reserve(static_cast<size_t>(nt) - 1);
    for (int t = 1; t < nt; ++t) {
        i64 b = t * chunk;
        i64 e = std::min<i64>(n, b + chunk);
        if (b >= e) break;
        workers.emplace_back(fn, b, e);
    }
    fn(0, std::min<i64>(n, chunk));
    for (auto& w : workers) w.join();
}

}  // namespace autolc
