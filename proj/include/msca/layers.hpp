#pragma once

#include <string>
#include <vector>

#include "msca/tensor.hpp"

namespace msca {

/// A named tensor owned by a module. Buffers are persisted but never trained.
struct NamedParam {
    std::string name;
    Tensor tensor;
    bool buffer = false;
};

using ParamList = std::vector<NamedParam>;

inline std::string join_name(const std::string& prefix, const std::string& name) {
    return prefix.empty() ? name : prefix + "." + name;
}

/// Weights are He-normal initialized; bias starts at zero.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::int64_t in, std::int64_t out, int kernel, int stride, int padding, Rng& rng);

    Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, stride_, padding_); }
    void collect(const std::string& prefix, ParamList& out) const;
    std::int64_t in_channels() const { return weight.dim(1); }
    std::int64_t out_channels() const { return weight.dim(0); }
    int stride() const { return stride_; }

    Tensor weight;
    Tensor bias;

private:
    int stride_ = 1;
    int padding_ = 0;
};

/// y = x W + b over the last axis, W stored as [in, out].
class Linear {
public:
    Linear() = default;
    Linear(std::int64_t in, std::int64_t out, Rng& rng);

    Tensor forward(const Tensor& x) const { return add(matmul(x, weight), bias); }
    void collect(const std::string& prefix, ParamList& out) const;

    Tensor weight;
    Tensor bias;
};

class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(std::int64_t dim);

    Tensor forward(const Tensor& x) const { return layernorm_lastdim(x, gamma, beta); }
    void collect(const std::string& prefix, ParamList& out) const;

    Tensor gamma;
    Tensor beta;
};

/// Sets requires_grad on every non-buffer entry.
void set_trainable(const ParamList& params, bool on);

}  // namespace msca
