#include <gtest/gtest.h>

#include <cmath>

#include "msca/tensor.hpp"
#include "msca/tensor_io.hpp"

using namespace msca;

namespace {

// Direct seven-loop convolution with zero padding.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto O = w.dim(0), K = w.dim(2);
    const auto Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(N * O * Ho * Wo));
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t o = 0; o < O; ++o)
            for (std::int64_t y = 0; y < Ho; ++y)
                for (std::int64_t xx = 0; xx < Wo; ++xx) {
                    double acc = b.defined() ? b.at(o) : 0.0;
                    for (std::int64_t c = 0; c < C; ++c)
                        for (std::int64_t i = 0; i < K; ++i)
                            for (std::int64_t j = 0; j < K; ++j) {
                                const auto iy = y * stride + i - pad, ix = xx * stride + j - pad;
                                if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
                                acc += x.at(((n * C + c) * H + iy) * W + ix) * w.at(((o * C + c) * K + i) * K + j);
                            }
                    out[static_cast<std::size_t>(((n * O + o) * Ho + y) * Wo + xx)] = acc;
                }
    return out;
}

}  // namespace

struct ConvCase {
    Shape x, w;
    int stride, pad;
    bool bias;
};

class ConvOracle : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvOracle, MatchesDirectLoops) {
    const auto& p = GetParam();
    Rng rng(7);
    Tensor x = Tensor::uniform(p.x, rng, -1, 1), w = Tensor::uniform(p.w, rng, -1, 1);
    Tensor b = p.bias ? Tensor::uniform({p.w[0]}, rng, -1, 1) : Tensor();
    const Tensor y = conv2d(x, w, b, p.stride, p.pad);
    const auto ref = naive_conv(x, w, b, p.stride, p.pad);
    ASSERT_EQ(static_cast<std::size_t>(y.numel()), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.at(static_cast<std::int64_t>(i)), ref[i], 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvOracle,
                         ::testing::Values(ConvCase{{2, 3, 7, 5}, {4, 3, 3, 3}, 1, 1, true},
                                           ConvCase{{1, 2, 8, 8}, {3, 2, 3, 3}, 2, 1, true},
                                           ConvCase{{2, 4, 5, 5}, {6, 4, 1, 1}, 1, 0, true},
                                           ConvCase{{1, 3, 16, 16}, {5, 3, 16, 16}, 16, 0, false},
                                           ConvCase{{1, 2, 9, 9}, {1, 2, 7, 7}, 1, 3, false}));

TEST(Conv, EvenKernelNeedsPatchStride) {
    Tensor x({1, 1, 8, 8}), w({1, 1, 4, 4});
    EXPECT_THROW(conv2d(x, w, {}, 1, 0), ConfigError);
    EXPECT_THROW(conv2d(x, Tensor({1, 2, 3, 3}), {}, 1, 1), DimensionError);
}

TEST(Broadcast, RightAlignedStretch) {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b({3}, {10, 20, 30});
    const Tensor c = a + b;
    EXPECT_EQ(c.shape(), (Shape{2, 3}));
    EXPECT_DOUBLE_EQ(c.at(4), 25);
    Tensor col({2, 1}, {1, 2});
    const Tensor d = mul(col, b);
    EXPECT_EQ(d.shape(), (Shape{2, 3}));
    EXPECT_DOUBLE_EQ(d.at(5), 60);
    EXPECT_THROW(add(a, Tensor({2})), DimensionError);
}

TEST(Matmul, SmallProduct) {
    Tensor a({2, 2}, {1, 2, 3, 4}), b({2, 2}, {5, 6, 7, 8});
    const Tensor c = matmul(a, b);
    EXPECT_EQ(c.data()[0], 19);
    EXPECT_EQ(c.data()[1], 22);
    EXPECT_EQ(c.data()[2], 43);
    EXPECT_EQ(c.data()[3], 50);
    EXPECT_THROW(matmul(a, Tensor({3, 2})), DimensionError);
}

TEST(Softmax, RowsSumToOneAndRejectScalars) {
    Rng rng(1);
    const Tensor s = softmax_lastdim(Tensor::uniform({3, 4}, rng, -50, 50));
    for (int r = 0; r < 3; ++r) {
        double acc = 0;
        for (int c = 0; c < 4; ++c) acc += s.at(r * 4 + c);
        EXPECT_NEAR(acc, 1.0, 1e-14);
    }
    EXPECT_THROW(softmax_lastdim(Tensor::scalar(1.0)), DimensionError);
}

TEST(Sigmoid, StableAtExtremes) {
    const Tensor s = sigmoid(Tensor({2}, {-800, 800}));
    EXPECT_EQ(s.at(0), 0.0);
    EXPECT_EQ(s.at(1), 1.0);
}

TEST(Autodiff, ReusedInputAccumulates) {
    Tensor x = Tensor::scalar(3.0);
    x.set_requires_grad(true);
    const Tensor y = x * x + x;  // dy/dx = 2x + 1
    backward(y);
    EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Autodiff, BackwardNeedsScalarWithGraph) {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    EXPECT_THROW(backward(x * 2.0), ContractError);
    EXPECT_THROW(backward(sum(Tensor({2}, {1, 2}))), ContractError);
}

TEST(Autodiff, NoGradGuardStopsRecording) {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    {
        NoGradGuard guard;
        EXPECT_FALSE((x * 2.0).requires_grad());
    }
    EXPECT_TRUE((x * 2.0).requires_grad());
}

TEST(Autodiff, GraphIsTopological) {
    Tensor x({2, 2}, {1, 2, 3, 4});
    x.set_requires_grad(true);
    const Tensor y = sum(relu(matmul(x, x)) * sigmoid(x));
    const Graph g = Graph::trace(y);
    EXPECT_TRUE(g.is_topological());
    EXPECT_GE(g.ops().size(), 5u);
}

TEST(Autodiff, DetachCutsHistory) {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    const Tensor d = (x * 3.0).detach();
    EXPECT_FALSE(d.requires_grad());
    EXPECT_TRUE(d.is_leaf());
    EXPECT_DOUBLE_EQ(d.at(1), 6.0);
}

TEST(Autodiff, RequiresGradOnlyOnLeaves) {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    Tensor y = x * 2.0;
    EXPECT_THROW(y.set_requires_grad(false), ContractError);
}

TEST(Tensor, RejectsBadShapes) {
    EXPECT_THROW(Tensor({2, 0}), DimensionError);
    EXPECT_THROW(Tensor({2}, std::vector<double>{1, 2, 3}), DimensionError);
    EXPECT_THROW(reshape(Tensor({2, 3}), {4}), DimensionError);
}

TEST(TensorIo, RoundTripBothDtypes) {
    Rng rng(3);
    const Tensor t = Tensor::uniform({2, 3, 4}, rng, -5, 5);
    const Tensor back = decode_tensor(encode_tensor(t, DType::F64));
    EXPECT_EQ(back.shape(), t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) EXPECT_EQ(back.at(i), t.at(i));
    const Tensor f = decode_tensor(encode_tensor(t, DType::F32));
    for (std::int64_t i = 0; i < t.numel(); ++i) EXPECT_EQ(f.at(i), static_cast<double>(static_cast<float>(t.at(i))));
}

TEST(TensorIo, MalformedInputsReportOffsets) {
    auto bytes = encode_tensor(Tensor({2, 2}, 1.0), DType::F64);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    try {
        decode_tensor(bad_magic);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    EXPECT_THROW(decode_tensor(truncated), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 99;
    try {
        decode_tensor(bad_version);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 4u);
    }
}
