#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "stenoseg/ssm.hpp"
#include "testutil.hpp"

using namespace stenoseg;
using testutil::gradcheck;
using testutil::rand_tensor;

namespace {

// Independent scalar-loop oracle: per-timestep recurrence with explicit
// state, no shared code with selective_scan_core.
std::vector<double> scan_oracle(const std::vector<double>& u, const std::vector<double>& delta,
                                const std::vector<double>& A, const std::vector<double>& B,
                                const std::vector<double>& C, const std::vector<double>& Dsk,
                                std::size_t L, std::size_t D, std::size_t N) {
    std::vector<double> y(L * D, 0.0);
    std::vector<double> h(D * N, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t d = 0; d < D; ++d) {
            double out = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const double abar = std::exp(delta[t * D + d] * A[d * N + n]);
                const double bbar = delta[t * D + d] * B[t * N + n];
                h[d * N + n] = abar * h[d * N + n] + bbar * u[t * D + d];
                out += C[t * N + n] * h[d * N + n];
            }
            y[t * D + d] = out + Dsk[d] * u[t * D + d];
        }
    }
    return y;
}

SSMParams<double> make_params(std::size_t D, std::size_t N, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return SSMParams<double>::init(D, N, rng);
}

}  // namespace

TEST_CASE("selection projections") {
    auto p = make_params(4, 3, 1);
    // x = 0 with zero delta bias -> delta = softplus(0) = ln 2
    p.delta_bias = Tensor<double>::zeros(Shape{4}, true);
    auto x0 = Tensor<double>::zeros(Shape{1, 5, 4});
    auto sel = selection_projections(x0, p);
    for (double v : sel.delta.values()) CHECK(v == Catch::Approx(std::log(2.0)));

    // W_B = 0 -> B = 0
    p.W_B = Tensor<double>::zeros(Shape{4, 3}, true);
    std::mt19937_64 rng(2);
    auto x = rand_tensor(Shape{1, 5, 4}, rng, -1, 1, false);
    auto sel2 = selection_projections(x, p);
    for (double v : sel2.B.values()) CHECK(v == 0.0);
    for (double v : sel2.delta.values()) CHECK(v > 0.0);

    // exact match against an independent matrix-multiply recomputation
    auto p3 = make_params(4, 3, 3);
    auto sel3 = selection_projections(x, p3);
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t n = 0; n < 3; ++n) {
            double acc = 0;
            for (std::size_t d = 0; d < 4; ++d)
                acc += x.values()[t * 4 + d] * p3.W_C.values()[d * 3 + n];
            CHECK(sel3.C.values()[t * 3 + n] == acc);
        }
}

TEST_CASE("discretize") {
    // A=-1, delta=ln2 -> Abar = 0.5
    std::vector<double> A{-1.0}, B{2.0}, delta{std::log(2.0)};
    auto d = discretize(A, B, delta, 1, 1, 1);
    CHECK(d.A_bar[0] == Catch::Approx(0.5));
    CHECK(d.B_bar[0] == Catch::Approx(2.0 * std::log(2.0)));

    // delta -> 0+ limit: Abar -> 1, Bbar -> 0
    std::vector<double> tiny{1e-8};
    auto dl = discretize(A, B, tiny, 1, 1, 1);
    CHECK(std::abs(dl.A_bar[0] - 1.0) < 1e-7);
    CHECK(std::abs(dl.B_bar[0]) < 1e-7);

    CHECK_THROWS_AS(discretize(A, B, std::vector<double>{0.0}, 1, 1, 1), NumericError);
    CHECK_THROWS_AS(discretize(A, B, std::vector<double>{-1.0}, 1, 1, 1), NumericError);

    // random instance vs scalar recomputation
    std::mt19937_64 rng(5);
    const std::size_t L = 4, D = 3, N = 2;
    std::uniform_real_distribution<double> ud(0.01, 1.0), an(-3.0, -0.1), bn(-1.0, 1.0);
    std::vector<double> Ar(D * N), Br(L * N), dr(L * D);
    for (auto& v : Ar) v = an(rng);
    for (auto& v : Br) v = bn(rng);
    for (auto& v : dr) v = ud(rng);
    auto dd = discretize(Ar, Br, dr, L, D, N);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t d2 = 0; d2 < D; ++d2)
            for (std::size_t n = 0; n < N; ++n) {
                CHECK(dd.A_bar[(t * D + d2) * N + n] ==
                      std::exp(dr[t * D + d2] * Ar[d2 * N + n]));
                CHECK(dd.A_bar[(t * D + d2) * N + n] > 0.0);
                CHECK(dd.A_bar[(t * D + d2) * N + n] < 1.0);
                CHECK(dd.B_bar[(t * D + d2) * N + n] == dr[t * D + d2] * Br[t * N + n]);
            }
}

TEST_CASE("degenerate recurrence is a cumulative sum") {
    // Abar=1 (delta*A ~ 0), Bbar=1, C=1, Dskip=0 -> y = cumsum(u)
    const std::size_t L = 3;
    auto u = Tensor<double>(Shape{1, L, 1}, {1, 2, 3});
    auto delta = Tensor<double>::ones(Shape{1, L, 1});
    auto A = Tensor<double>(Shape{1, 1}, std::vector<double>{-1e-15});
    auto B = Tensor<double>::ones(Shape{1, L, 1});
    auto C = Tensor<double>::ones(Shape{1, L, 1});
    auto D = Tensor<double>::zeros(Shape{1});
    auto y = selective_scan_core(u, delta, A, B, C, D);
    CHECK(y.values()[0] == Catch::Approx(1.0));
    CHECK(y.values()[1] == Catch::Approx(3.0));
    CHECK(y.values()[2] == Catch::Approx(6.0));
}

TEST_CASE("single-step scan") {
    auto p = make_params(3, 2, 7);
    std::mt19937_64 rng(8);
    auto u = rand_tensor(Shape{1, 1, 3}, rng, -1, 1, false);
    auto y = selective_scan_sequential(u, p);
    auto sel = selection_projections(u, p);
    auto A = p.A();
    // y1 = C1·(B1bar u1) + Dskip u1, recomputed by hand
    for (std::size_t d = 0; d < 3; ++d) {
        double acc = 0;
        for (std::size_t n = 0; n < 2; ++n) {
            const double abar_irrelevant = 0;  // h0 = 0
            (void)abar_irrelevant;
            acc += sel.C.values()[n] * sel.delta.values()[d] * sel.B.values()[n] * u.values()[d];
        }
        acc += p.D_skip.values()[d] * u.values()[d];
        CHECK(y.values()[d] == Catch::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("sequential scan matches scalar-loop oracle") {
    const std::size_t L = 64, D = 4, N = 8;
    auto p = make_params(D, N, 9);
    std::mt19937_64 rng(10);
    auto u = rand_tensor(Shape{1, L, D}, rng, -1, 1, false);
    auto y = selective_scan_sequential(u, p);

    auto sel = selection_projections(u, p);
    auto A = p.A();
    auto oy = scan_oracle(u.values(), sel.delta.values(), A.values(), sel.B.values(),
                          sel.C.values(), p.D_skip.values(), L, D, N);
    for (std::size_t i = 0; i < L * D; ++i) CHECK(y.values()[i] == oy[i]);
}

TEST_CASE("empty sequence is rejected") {
    auto p = make_params(2, 2, 11);
    CHECK_THROWS_AS(selective_scan_sequential(Tensor<double>(Shape{1, 0, 2}), p), ShapeError);
}

TEST_CASE("scan composition operator is associative") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> ad(0.01, 0.99), bd(-2.0, 2.0);
    for (int iter = 0; iter < 200; ++iter) {
        ScanElem<double> e1{ad(rng), bd(rng)}, e2{ad(rng), bd(rng)}, e3{ad(rng), bd(rng)};
        auto left = scan_compose(scan_compose(e1, e2), e3);
        auto right = scan_compose(e1, scan_compose(e2, e3));
        CHECK(std::abs(left.a - right.a) < 1e-12);
        CHECK(std::abs(left.b - right.b) < 1e-12);
    }
}

TEST_CASE("parallel scan equals sequential") {
    // cumulative-sum degenerate case through the public API would need
    // contrived params; instead check exhaustive lengths with random params.
    for (std::size_t L : {1ul, 2ul, 3ul, 17ul, 64ul, 1000ul}) {
        auto p = make_params(3, 4, 13 + L);
        std::mt19937_64 rng(14 + L);
        auto u = Tensor<double>::uniform(Shape{2, L, 3}, -1.0, 1.0, rng);
        auto ys = selective_scan_sequential(u, p);
        auto yp = selective_scan_parallel(u, p);
        double md = 0;
        for (std::size_t i = 0; i < ys.numel(); ++i)
            md = std::max(md, std::abs(ys.values()[i] - yp.values()[i]));
        CHECK(md < 1e-10);
        if (L == 1) CHECK(ys.values() == yp.values());  // bitwise at L=1
    }
    // property sweep L = 1..64
    for (std::size_t L = 1; L <= 64; ++L) {
        auto p = make_params(2, 3, 100 + L);
        std::mt19937_64 rng(200 + L);
        auto u = Tensor<double>::uniform(Shape{1, L, 2}, -1.0, 1.0, rng);
        auto ys = selective_scan_sequential(u, p);
        auto yp = selective_scan_parallel(u, p);
        for (std::size_t i = 0; i < ys.numel(); ++i)
            CHECK(std::abs(ys.values()[i] - yp.values()[i]) < 1e-10);
    }
}

TEST_CASE("scan gradient vs finite differences") {
    const std::size_t L = 5, D = 3, N = 2;
    auto p = make_params(D, N, 15);
    std::mt19937_64 rng(16);
    auto u = rand_tensor(Shape{1, L, D}, rng, -1, 1);
    std::vector<Tensor<double>*> leaves{&u};
    for (auto* t : p.parameters()) leaves.push_back(t);
    gradcheck([&]() { return sum(square(selective_scan_sequential(u, p))); }, leaves, 1e-5);
}

TEST_CASE("bounded state under A < 0") {
    const std::size_t L = 256, D = 2, N = 3;
    auto p = make_params(D, N, 17);
    std::mt19937_64 rng(18);
    auto u = rand_tensor(Shape{1, L, D}, rng, -1, 1, false);
    auto sel = selection_projections(u, p);
    auto A = p.A();
    // explicit state trace
    std::vector<double> h(D * N, 0.0);
    double max_abar = 0, max_bu = 0, max_h = 0;
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t d = 0; d < D; ++d)
            for (std::size_t n = 0; n < N; ++n) {
                const double abar = std::exp(sel.delta.values()[t * D + d] * A.values()[d * N + n]);
                const double bu = sel.delta.values()[t * D + d] * sel.B.values()[t * N + n] *
                                  u.values()[t * D + d];
                h[d * N + n] = abar * h[d * N + n] + bu;
                max_abar = std::max(max_abar, abar);
                max_bu = std::max(max_bu, std::abs(bu));
                max_h = std::max(max_h, std::abs(h[d * N + n]));
            }
    CHECK(max_abar < 1.0);
    CHECK(max_h <= max_bu / (1.0 - max_abar) + 1e-12);
}
