#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace wid {

// Error taxonomy. Stage-specific subclasses so callers (and the CLI exit-code
// mapping) can tell failure classes apart.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct ParameterError : Error { using Error::Error; };
struct UsageError : Error { using Error::Error; };
struct CorpusError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct IntegrityError : Error { using Error::Error; };
struct NoEvidenceError : Error { using Error::Error; };
struct DegenerateComponentError : Error { using Error::Error; };
struct FitError : Error { using Error::Error; };

struct IngestionError : Error {
    std::vector<std::string> paths;
    explicit IngestionError(const std::string& msg, std::vector<std::string> offending = {})
        : Error(msg), paths(std::move(offending)) {}
};

// Non-convergence carries the last iterate and residual so callers can inspect.
struct ConvergenceError : Error {
    std::vector<double> iterate;
    double residual = 0.0;
    ConvergenceError(const std::string& msg, std::vector<double> last, double res)
        : Error(msg), iterate(std::move(last)), residual(res) {}
};

// Chunked parallel map over [0, n). Each index writes only its own slot, so
// results are identical for any worker count. workers <= 1 runs inline.
inline void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& body) {
    if (n == 0) return;
    if (workers == 0) workers = std::thread::hardware_concurrency();
    if (workers <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr first_error = nullptr;
    std::mutex err_mutex;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            // strided assignment keeps chunk sizes balanced
            for (std::size_t i = w; i < n; i += workers) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace wid
