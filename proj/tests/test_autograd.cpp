#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diffcl/autograd.hpp"
#include "test_helpers.hpp"

using namespace diffcl;
using diffcl::testing::grad_check;
using diffcl::testing::GradCheckEntry;

namespace {

NodePtr rand_param(const Shape& s, std::uint64_t seed, const char* name) {
    Rng rng(seed);
    return make_param(Tensor::randn(s, rng), name);
}

std::vector<GradCheckEntry> all_entries(const NodePtr& p) {
    std::vector<GradCheckEntry> out;
    for (std::size_t i = 0; i < p->value.numel(); ++i) out.push_back({p, i});
    return out;
}

}  // namespace

TEST_CASE("elementwise chain gradients match finite differences") {
    auto a = rand_param({2, 3}, 1, "a");
    auto b = rand_param({2, 3}, 2, "b");
    auto fwd = [&] {
        auto y = mul(sigmoid(a), add(softplus(b), mul_scalar(a, 0.5)));
        return sum_all(mul(y, y));
    };
    auto entries = all_entries(a);
    auto eb = all_entries(b);
    entries.insert(entries.end(), eb.begin(), eb.end());
    auto res = grad_check(fwd, entries);
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("division and log gradients") {
    auto a = rand_param({4}, 3, "a");
    auto b = rand_param({4}, 4, "b");
    auto fwd = [&] {
        auto pa = add_scalar(mul(a, a), 0.5);
        auto pb = add_scalar(mul(b, b), 1.0);
        return sum_all(log_(div_(pa, pb)));
    };
    auto entries = all_entries(a);
    auto eb = all_entries(b);
    entries.insert(entries.end(), eb.begin(), eb.end());
    CHECK(grad_check(fwd, entries).max_rel_err < 1e-6);
}

TEST_CASE("linear layer gradients") {
    auto x = rand_param({3, 4}, 5, "x");
    auto w = rand_param({2, 4}, 6, "w");
    auto b = rand_param({2}, 7, "b");
    auto fwd = [&] { return sum_all(mul(linear(x, w, b), linear(x, w, b))); };
    std::vector<GradCheckEntry> entries;
    for (auto* p : {&x, &w, &b}) {
        auto e = all_entries(*p);
        entries.insert(entries.end(), e.begin(), e.end());
    }
    CHECK(grad_check(fwd, entries).max_rel_err < 1e-6);
}

TEST_CASE("matmul_nt gradients") {
    auto a = rand_param({3, 5}, 8, "a");
    auto b = rand_param({4, 5}, 9, "b");
    auto fwd = [&] { return sum_all(relu(matmul_nt(a, b))); };
    std::vector<GradCheckEntry> entries = all_entries(a);
    auto eb = all_entries(b);
    entries.insert(entries.end(), eb.begin(), eb.end());
    CHECK(grad_check(fwd, entries).max_rel_err < 1e-5);
}

TEST_CASE("conv3d value against direct loops") {
    Rng rng(11);
    Tensor xt = Tensor::randn({1, 2, 3, 3, 3}, rng);
    Tensor wt = Tensor::randn({2, 2, 3, 3, 3}, rng);
    Tensor bt = Tensor::randn({2}, rng);
    auto x = constant(xt);
    auto w = constant(wt);
    auto b = constant(bt);
    auto y = conv3d(x, w, b, 1, 1);
    REQUIRE(y->value.shape == Shape({1, 2, 3, 3, 3}));
    // direct correlation with zero padding
    for (int co = 0; co < 2; ++co)
        for (int oz = 0; oz < 3; ++oz)
            for (int oy = 0; oy < 3; ++oy)
                for (int ox = 0; ox < 3; ++ox) {
                    double acc = bt.data[co];
                    for (int ci = 0; ci < 2; ++ci)
                        for (int kz = 0; kz < 3; ++kz)
                            for (int ky = 0; ky < 3; ++ky)
                                for (int kx = 0; kx < 3; ++kx) {
                                    const int iz = oz + kz - 1, iy = oy + ky - 1, ix = ox + kx - 1;
                                    if (iz < 0 || iz >= 3 || iy < 0 || iy >= 3 || ix < 0 || ix >= 3)
                                        continue;
                                    acc += wt.data[(((static_cast<std::size_t>(co) * 2 + ci) * 3 + kz) * 3 + ky) * 3 + kx] *
                                           xt.data[((static_cast<std::size_t>(ci) * 3 + iz) * 3 + iy) * 3 + ix];
                                }
                    const double got = y->value.data[(((static_cast<std::size_t>(co) * 3) + oz) * 3 + oy) * 3 + ox];
                    CHECK(got == doctest::Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("conv3d gradients (stride 1 and 2, zero and replicate pad)") {
    for (int stride : {1, 2}) {
        for (auto mode : {PadMode::Zero, PadMode::Replicate}) {
            auto x = rand_param({2, 2, 4, 4, 4}, 21 + stride, "x");
            auto w = rand_param({3, 2, 2, 2, 2}, 22, "w");
            auto b = rand_param({3}, 23, "b");
            auto fwd = [&] {
                auto y = conv3d(x, w, b, stride, stride == 1 ? 1 : 0, mode);
                return sum_all(mul(y, y));
            };
            auto entries = diffcl::testing::sample_entries({x, w, b}, 24, 99);
            auto res = grad_check(fwd, entries);
            INFO("stride=", stride, " mode=", static_cast<int>(mode));
            CHECK(res.max_rel_err < 1e-5);
        }
    }
}

TEST_CASE("group norm gradients") {
    auto x = rand_param({2, 4, 2, 2, 2}, 31, "x");
    auto g = rand_param({4}, 32, "g");
    auto b = rand_param({4}, 33, "b");
    auto fwd = [&] {
        auto y = group_norm(x, g, b, 2);
        return sum_all(mul(y, y));
    };
    auto entries = diffcl::testing::sample_entries({x, g, b}, 30, 44);
    CHECK(grad_check(fwd, entries).max_rel_err < 1e-5);
}

TEST_CASE("layer norm (sequence) gradients") {
    auto x = rand_param({2, 3, 5}, 41, "x");
    auto g = rand_param({5}, 42, "g");
    auto b = rand_param({5}, 43, "b");
    auto fwd = [&] { return sum_all(mul(layer_norm_last(x, g, b), layer_norm_last(x, g, b))); };
    auto entries = diffcl::testing::sample_entries({x, g, b}, 30, 45);
    CHECK(grad_check(fwd, entries).max_rel_err < 1e-5);
}

TEST_CASE("softmax gradients and row sums") {
    auto x = rand_param({2, 3, 2, 2, 2}, 51, "x");
    auto sm = softmax_ch(x);
    // per-voxel sums equal 1
    for (int n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 8; ++i) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) s += sm->value.data[(static_cast<std::size_t>(n) * 3 + c) * 8 + i];
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    auto w = rand_param({2, 3, 2, 2, 2}, 52, "w");
    auto fwd = [&] { return sum_all(mul(softmax_ch(x), w)); };
    CHECK(grad_check(fwd, diffcl::testing::sample_entries({x}, 20, 53)).max_rel_err < 1e-5);
}

TEST_CASE("upsample, concat, channel pools, broadcast mul") {
    auto x = rand_param({1, 2, 2, 2, 2}, 61, "x");
    auto g = rand_param({1, 2, 4, 4, 4}, 62, "g");
    auto fwd = [&] {
        auto up = upsample_nearest2(x);               // [1,2,4,4,4]
        auto cat = concat_ch(up, g);                  // [1,4,4,4,4]
        auto gate = sigmoid(channel_mean(cat));
        auto mx = channel_max(cat);
        auto y = broadcast_mul_ch(cat, gate);
        return sum_all(add(mul(y, y), broadcast_mul_ch(cat, mx)));
    };
    auto entries = diffcl::testing::sample_entries({x, g}, 24, 63);
    CHECK(grad_check(fwd, entries).max_rel_err < 1e-5);
}

TEST_CASE("l2 normalize: unit norms, zero-input handling, gradients") {
    auto x = rand_param({1, 3, 2, 2, 2}, 71, "x");
    auto y = l2_normalize_ch(x);
    for (std::size_t i = 0; i < 8; ++i) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double v = y->value.data[static_cast<std::size_t>(c) * 8 + i];
            s += v * v;
        }
        CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-9));
    }
    // zero input still produces a unit vector
    auto z = constant(Tensor::zeros({1, 3, 1, 1, 1}));
    auto yz = l2_normalize_ch(z);
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += yz->value.data[static_cast<std::size_t>(c)] * yz->value.data[static_cast<std::size_t>(c)];
    CHECK(std::sqrt(s) == doctest::Approx(1.0));

    auto w = rand_param({1, 3, 2, 2, 2}, 72, "w");
    auto fwd = [&] { return sum_all(mul(l2_normalize_ch(x), w)); };
    CHECK(grad_check(fwd, diffcl::testing::sample_entries({x}, 20, 73)).max_rel_err < 1e-5);
}

TEST_CASE("selective scan gradients") {
    auto x = rand_param({1, 5, 2}, 81, "x");
    auto a = rand_param({1, 5, 2, 3}, 82, "a");
    auto b = rand_param({1, 5, 2, 3}, 83, "b");
    auto c = rand_param({1, 5, 2, 3}, 84, "c");
    // keep |a| < 1 for stability
    for (auto& v : a->value.data) v = 0.5 * std::tanh(v);
    auto fwd = [&] {
        auto y = selective_scan_op(x, a, b, c);
        return sum_all(mul(y, y));
    };
    auto entries = diffcl::testing::sample_entries({x, a, b, c}, 40, 85);
    CHECK(grad_check(fwd, entries).max_rel_err < 1e-5);
}

TEST_CASE("gather_rows and permute_seq gradients") {
    auto x = rand_param({1, 4, 3}, 91, "x");
    auto fwd_g = [&] {
        auto flat = reshape(x, {4, 3});
        auto rows = gather_rows(flat, {0, 2, 2}, 3);
        return sum_all(mul(rows, rows));
    };
    CHECK(grad_check(fwd_g, all_entries(x)).max_rel_err < 1e-6);

    auto fwd_p = [&] {
        auto p = permute_seq(x, {3, 1, 0, 2});
        return sum_all(mul(p, p));
    };
    CHECK(grad_check(fwd_p, all_entries(x)).max_rel_err < 1e-6);
}

TEST_CASE("seq layout round trip") {
    auto x = rand_param({2, 3, 2, 2, 1}, 95, "x");
    auto rt = from_seq(to_seq(x), {2, 2, 1});
    for (std::size_t i = 0; i < x->value.numel(); ++i)
        CHECK(rt->value.data[i] == x->value.data[i]);
    auto fwd = [&] { return sum_all(mul(from_seq(to_seq(x), {2, 2, 1}), x)); };
    CHECK(grad_check(fwd, diffcl::testing::sample_entries({x}, 12, 96)).max_rel_err < 1e-6);
}

TEST_CASE("contrastive terms gradients") {
    auto sp = rand_param({2, 2}, 101, "sp");
    auto sn = rand_param({2, 3}, 102, "sn");
    auto fwd = [&] { return contrastive_terms(sp, sn, 0.5); };
    std::vector<GradCheckEntry> entries = all_entries(sp);
    auto en = all_entries(sn);
    entries.insert(entries.end(), en.begin(), en.end());
    CHECK(grad_check(fwd, entries).max_rel_err < 1e-6);
}

TEST_CASE("two backward calls on disjoint graphs accumulate independently") {
    auto a = rand_param({2}, 111, "a");
    auto b = rand_param({2}, 112, "b");
    auto la = sum_all(mul(a, a));
    auto lb = sum_all(mul(b, b));
    backward(la);
    backward(lb);
    CHECK(b->grad.numel() == 2);
    CHECK(a->grad.data[0] == doctest::Approx(2.0 * a->value.data[0]));
    CHECK(b->grad.data[0] == doctest::Approx(2.0 * b->value.data[0]));
}
