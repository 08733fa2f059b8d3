// Serial reference vs OpenMP kernels, plus the full encoder forward.
// Build target uvet_bench; not part of ctest.

#ifdef _OPENMP
#include <omp.h>
#endif

#include <chrono>
#include <cstdio>
#include <functional>

#include "uvet/encoder.hpp"
#include "uvet/kernels.hpp"
#include "uvet/rng.hpp"
#include "uvet/serial_ref.hpp"
#include "uvet/synthetic.hpp"

using namespace uvet;

namespace {

Tensor random_tensor(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(-1.0, 1.0);
    return t;
}

double time_of(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
           static_cast<double>(reps);
}

void row(const char* name, double serial_s, double parallel_s, double check) {
    std::printf("%-28s %10.3f ms %10.3f ms %7.2fx   max|diff| %.2e\n", name, serial_s * 1e3,
                parallel_s * 1e3, serial_s / parallel_s, check);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (built without OpenMP)\n");
#endif
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    Rng rng(1);
    for (const std::size_t n : {64, 128, 256, 384}) {
        const Tensor a = random_tensor(rng, {n, n});
        const Tensor b = random_tensor(rng, {n, n});
        Tensor out_serial, out_parallel;
        const int reps = n <= 128 ? 40 : 8;
        const double ts = time_of([&] { out_serial = serial::matmul(a, b); }, reps);
        const double tp = time_of([&] { out_parallel = kern::matmul(a, b); }, reps);
        char name[64];
        std::snprintf(name, sizeof name, "matmul %zux%zu", n, n);
        row(name, ts, tp, max_abs_diff(out_serial, out_parallel));
    }

    {
        const std::size_t rows = 4096, cols = 256;
        const Tensor a = random_tensor(rng, {rows, cols});
        Tensor s, p;
        const double ts = time_of([&] { s = serial::softmax_rows(a); }, 20);
        const double tp = time_of([&] { p = kern::softmax_rows(a); }, 20);
        row("softmax_rows 4096x256", ts, tp, max_abs_diff(s, p));

        const Tensor gain = Tensor::full({1, cols}, 1.0);
        const Tensor bias = Tensor::zeros({1, cols});
        Tensor ls, lp;
        const double tls = time_of([&] { ls = serial::layer_norm(a, gain, bias, kLayerNormEps); }, 20);
        const double tlp = time_of([&] { lp = kern::layer_norm(a, gain, bias, kLayerNormEps); }, 20);
        row("layer_norm 4096x256", tls, tlp, max_abs_diff(ls, lp));

        Tensor gs, gp;
        const double tgs = time_of([&] { gs = serial::gelu(a); }, 20);
        const double tgp = time_of([&] { gp = kern::gelu(a); }, 20);
        row("gelu 4096x256", tgs, tgp, max_abs_diff(gs, gp));
    }

    // full forward: toy encoder sizes, plain encode vs MC dropout batch
    {
        EncoderConfig cfg;
        cfg.image_size = 64;
        cfg.patch_size = 8;
        cfg.num_layers = 8;
        cfg.hidden_dim = 64;
        cfg.num_heads = 8;
        const EncoderParams params = init_params(cfg, 7);
        const Tensor image = make_synthetic_image(cfg.image_size, cfg.channels, 3);

        const double tf = time_of([&] { encode(image, params, cfg); }, 10);
        std::printf("%-28s %10.3f ms per forward (%zu tokens, d=%zu, L=%zu)\n", "encode 64px/L8/d64",
                    tf * 1e3, cfg.num_tokens(), cfg.hidden_dim, cfg.num_layers);

        const double tmc =
            time_of([&] { mc_dropout_encode(image, params, cfg, 0.5, 64, 1); }, 3);
        std::printf("%-28s %10.3f ms per 64-sample estimate (samples run in parallel)\n",
                    "mc_dropout 64 passes", tmc * 1e3);
    }
    return 0;
}
