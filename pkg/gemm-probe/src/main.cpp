// GEMM throughput probe: times FP32 matrix multiplies on the GPU and prints
// one machine-readable result line on stdout.
//
// The CUDA runtime and cuBLAS are loaded with dlopen at startup so the
// binary builds and reports clean errors on machines without the toolkit:
// a missing or broken GPU stack exits with status 3 instead of failing to
// link. All diagnostics go to stderr; stdout carries only the contract line.

#include <dlfcn.h>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "probe.hpp"

namespace {

using gemm_probe::Invocation;

// Minimal slices of the CUDA runtime / cuBLAS ABIs we call through dlsym.
using cudaError_t = int;
using cublasStatus_t = int;
using cublasHandle_t = void*;
constexpr int kCudaMemcpyHostToDevice = 1;
constexpr int kCublasOpN = 0;

using cudaMallocFn = cudaError_t (*)(void**, size_t);
using cudaFreeFn = cudaError_t (*)(void*);
using cudaMemcpyFn = cudaError_t (*)(void*, const void*, size_t, int);
using cudaDeviceSynchronizeFn = cudaError_t (*)();
using cublasCreateFn = cublasStatus_t (*)(cublasHandle_t*);
using cublasDestroyFn = cublasStatus_t (*)(cublasHandle_t);
using cublasSgemmFn = cublasStatus_t (*)(cublasHandle_t, int, int, int, int,
                                         int, const float*, const float*, int,
                                         const float*, int, const float*,
                                         float*, int);

struct CudaApi {
    cudaMallocFn cuda_malloc;
    cudaFreeFn cuda_free;
    cudaMemcpyFn cuda_memcpy;
    cudaDeviceSynchronizeFn cuda_device_synchronize;
    cublasCreateFn cublas_create;
    cublasDestroyFn cublas_destroy;
    cublasSgemmFn cublas_sgemm;
};

void* must_sym(void* handle, const char* name) {
    void* sym = dlsym(handle, name);
    if (sym == nullptr) {
        std::fprintf(stderr, "gemm-probe: missing symbol %s: %s\n", name,
                     dlerror());
    }
    return sym;
}

// Loads libcudart + libcublas; returns false (after printing to stderr) when
// the GPU stack is unavailable.
bool load_cuda(CudaApi* api) {
    void* cudart = dlopen("libcudart.so", RTLD_NOW | RTLD_GLOBAL);
    if (cudart == nullptr) {
        cudart = dlopen("libcudart.so.12", RTLD_NOW | RTLD_GLOBAL);
    }
    if (cudart == nullptr) {
        cudart = dlopen("libcudart.so.11.0", RTLD_NOW | RTLD_GLOBAL);
    }
    if (cudart == nullptr) {
        std::fprintf(stderr, "gemm-probe: CUDA runtime not found: %s\n",
                     dlerror());
        return false;
    }
    void* cublas = dlopen("libcublas.so", RTLD_NOW);
    if (cublas == nullptr) {
        cublas = dlopen("libcublas.so.12", RTLD_NOW);
    }
    if (cublas == nullptr) {
        cublas = dlopen("libcublas.so.11", RTLD_NOW);
    }
    if (cublas == nullptr) {
        std::fprintf(stderr, "gemm-probe: cuBLAS not found: %s\n", dlerror());
        return false;
    }
    api->cuda_malloc =
        reinterpret_cast<cudaMallocFn>(must_sym(cudart, "cudaMalloc"));
    api->cuda_free = reinterpret_cast<cudaFreeFn>(must_sym(cudart, "cudaFree"));
    api->cuda_memcpy =
        reinterpret_cast<cudaMemcpyFn>(must_sym(cudart, "cudaMemcpy"));
    api->cuda_device_synchronize = reinterpret_cast<cudaDeviceSynchronizeFn>(
        must_sym(cudart, "cudaDeviceSynchronize"));
    api->cublas_create =
        reinterpret_cast<cublasCreateFn>(must_sym(cublas, "cublasCreate_v2"));
    api->cublas_destroy =
        reinterpret_cast<cublasDestroyFn>(must_sym(cublas, "cublasDestroy_v2"));
    api->cublas_sgemm =
        reinterpret_cast<cublasSgemmFn>(must_sym(cublas, "cublasSgemm_v2"));
    return api->cuda_malloc && api->cuda_free && api->cuda_memcpy &&
           api->cuda_device_synchronize && api->cublas_create &&
           api->cublas_destroy && api->cublas_sgemm;
}

// Fixed-seed xorshift fill: contents only need to be nonzero and stable.
void fill_pseudo_random(std::vector<float>& buffer) {
    std::uint32_t state = 0x2545F491u;
    for (float& value : buffer) {
        state ^= state << 13;
        state ^= state >> 17;
        state ^= state << 5;
        value = static_cast<float>(state % 1000) / 1000.0f - 0.5f;
    }
}

int run_probe(const CudaApi& api, const Invocation& inv, std::uint64_t flops) {
    const size_t bytes_a = sizeof(float) * inv.m * inv.k;
    const size_t bytes_b = sizeof(float) * inv.k * inv.n;
    const size_t bytes_c = sizeof(float) * inv.m * inv.n;

    void* d_a = nullptr;
    void* d_b = nullptr;
    void* d_c = nullptr;
    if (api.cuda_malloc(&d_a, bytes_a) != 0 ||
        api.cuda_malloc(&d_b, bytes_b) != 0 ||
        api.cuda_malloc(&d_c, bytes_c) != 0) {
        std::fprintf(stderr,
                     "gemm-probe: device allocation failed "
                     "(%zu + %zu + %zu bytes)\n",
                     bytes_a, bytes_b, bytes_c);
        return gemm_probe::kExitAllocFailure;
    }

    {
        std::vector<float> host_a(inv.m * inv.k);
        std::vector<float> host_b(inv.k * inv.n);
        fill_pseudo_random(host_a);
        fill_pseudo_random(host_b);
        if (api.cuda_memcpy(d_a, host_a.data(), bytes_a,
                            kCudaMemcpyHostToDevice) != 0 ||
            api.cuda_memcpy(d_b, host_b.data(), bytes_b,
                            kCudaMemcpyHostToDevice) != 0) {
            std::fprintf(stderr, "gemm-probe: host-to-device copy failed\n");
            return gemm_probe::kExitRuntimeError;
        }
    }

    cublasHandle_t handle = nullptr;
    if (api.cublas_create(&handle) != 0) {
        std::fprintf(stderr, "gemm-probe: cublasCreate failed\n");
        return gemm_probe::kExitRuntimeError;
    }

    const float alpha = 1.0f;
    const float beta = 0.0f;
    auto sgemm = [&]() {
        return api.cublas_sgemm(
            handle, kCublasOpN, kCublasOpN, static_cast<int>(inv.m),
            static_cast<int>(inv.n), static_cast<int>(inv.k), &alpha,
            static_cast<const float*>(d_a), static_cast<int>(inv.m),
            static_cast<const float*>(d_b), static_cast<int>(inv.k), &beta,
            static_cast<float*>(d_c), static_cast<int>(inv.m));
    };

    for (std::int64_t i = 0; i < inv.warmup; ++i) {
        if (sgemm() != 0) {
            std::fprintf(stderr, "gemm-probe: warmup SGEMM failed\n");
            return gemm_probe::kExitRuntimeError;
        }
    }
    if (api.cuda_device_synchronize() != 0) {
        std::fprintf(stderr, "gemm-probe: synchronize after warmup failed\n");
        return gemm_probe::kExitRuntimeError;
    }

    const auto start = std::chrono::steady_clock::now();
    for (std::int64_t i = 0; i < inv.iterations; ++i) {
        if (sgemm() != 0) {
            std::fprintf(stderr, "gemm-probe: timed SGEMM failed\n");
            return gemm_probe::kExitRuntimeError;
        }
    }
    if (api.cuda_device_synchronize() != 0) {
        std::fprintf(stderr, "gemm-probe: final synchronize failed\n");
        return gemm_probe::kExitRuntimeError;
    }
    const std::chrono::duration<double> elapsed =
        std::chrono::steady_clock::now() - start;

    api.cublas_destroy(handle);
    api.cuda_free(d_a);
    api.cuda_free(d_b);
    api.cuda_free(d_c);

    std::printf("%s\n",
                gemm_probe::format_result(flops, elapsed.count()).c_str());
    return gemm_probe::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    std::string error;
    const auto inv = gemm_probe::parse_args(argc, argv, &error);
    if (!inv) {
        std::fprintf(stderr, "gemm-probe: %s\n", error.c_str());
        return gemm_probe::kExitBadArguments;
    }
    const auto flops = gemm_probe::exact_flops(*inv);
    if (!flops) {
        std::fprintf(stderr,
                     "gemm-probe: 2*m*n*k*iterations overflows 64 bits\n");
        return gemm_probe::kExitBadArguments;
    }
    CudaApi api{};
    if (!load_cuda(&api)) {
        return gemm_probe::kExitRuntimeError;
    }
    return run_probe(api, *inv, *flops);
}
