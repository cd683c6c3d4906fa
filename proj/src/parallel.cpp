#include "stockpot/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace stockpot {

unsigned resolve_threads() {
    const char* env = std::getenv("STOCKPOT_THREADS");
    unsigned count = 0;
    if (env != nullptr && *env != '\0') {
        char* end = nullptr;
        const unsigned long parsed = std::strtoul(env, &end, 10);
        const bool valid = end != nullptr && *end == '\0' && env[0] != '-';
        count = valid ? static_cast<unsigned>(std::min(parsed, 256ul)) : 1;
    }
    if (count == 0) {
        count = std::thread::hardware_concurrency();
        if (count == 0) count = 1;
    }
    return count;
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
    const unsigned threads = resolve_threads();
    if (threads <= 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, count));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < count; i += workers) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace stockpot
