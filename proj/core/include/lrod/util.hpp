#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

namespace lrod {

/// Worker count: LRL_THREADS if set and positive, otherwise the number of
/// logical cores.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Each index is
/// processed exactly once; callers place results by index so reductions stay
/// in a fixed order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Version string captured at configure time (`git describe`).
std::string_view build_describe();

}  // namespace lrod
