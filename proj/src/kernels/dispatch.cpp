#include <cstdlib>
#include <string_view>

#include "madex/kernels.hpp"

namespace madex::kernels {

#if defined(MADEX_HAVE_AVX2)
const KernelTable& avx2_table_impl();
#endif

const KernelTable* avx2_table() {
#if defined(MADEX_HAVE_AVX2)
    static const bool supported = [] {
        __builtin_cpu_init();
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    }();
    if (supported) return &avx2_table_impl();
#endif
    return nullptr;
}

const KernelTable& active() {
    static const KernelTable* table = [] {
        const char* env = std::getenv("MADEX_SIMD");
        if (env != nullptr && std::string_view(env) == "scalar") return &scalar_table();
        if (const KernelTable* t = avx2_table()) return t;
        return &scalar_table();
    }();
    return *table;
}

}  // namespace madex::kernels
