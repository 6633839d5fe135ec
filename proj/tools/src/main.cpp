#include <malloc.h>

#include <iostream>
#include <string>
#include <vector>

#include "lrod_cli/cli.hpp"

int main(int argc, char** argv) {
    // Large activation buffers are freed and reallocated every step; keep
    // them on the heap instead of returning them to the kernel each time.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    std::vector<std::string> args(argv + 1, argv + argc);
    return lrod::cli::dispatch(args, std::cout, std::cerr);
}
