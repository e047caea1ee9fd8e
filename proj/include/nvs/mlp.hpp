#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "nvs/common.hpp"
#include "nvs/rng.hpp"

namespace nvs {

enum class Activation : unsigned char { Linear = 0, Relu = 1, Sigmoid = 2 };

// Small dense MLP with an explicit forward trace and hand-rolled backward.
// Weights are row-major [out x in].
template <typename T>
struct Mlp {
    struct Layer {
        int in = 0;
        int out = 0;
        Activation act = Activation::Linear;
        std::vector<T> w;
        std::vector<T> b;
    };

    std::vector<Layer> layers;

    int input_dim() const { return layers.empty() ? 0 : layers.front().in; }
    int output_dim() const { return layers.empty() ? 0 : layers.back().out; }

    // dims = {in, h1, ..., out}; hidden layers get `hidden_act`, the last layer
    // is linear (output activations belong to the call sites that own them).
    static Mlp make(const std::vector<int>& dims, Activation hidden_act, Rng& rng) {
        if (dims.size() < 2) throw std::invalid_argument("mlp needs at least one layer");
        Mlp net;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            Layer layer;
            layer.in = dims[l];
            layer.out = dims[l + 1];
            layer.act = (l + 2 < dims.size()) ? hidden_act : Activation::Linear;
            layer.w.resize(std::size_t(layer.in) * layer.out);
            layer.b.assign(layer.out, T(0));
            const double bound = 1.0 / std::sqrt(double(layer.in));
            for (auto& v : layer.w) v = T(rng.uniform(-bound, bound));
            net.layers.push_back(std::move(layer));
        }
        return net;
    }

    static Mlp zeros(const std::vector<int>& dims) {
        Rng rng(0);
        Mlp net = make(dims, Activation::Linear, rng);
        for (auto& layer : net.layers) {
            std::fill(layer.w.begin(), layer.w.end(), T(0));
            std::fill(layer.b.begin(), layer.b.end(), T(0));
        }
        return net;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.w.size() + l.b.size();
        return n;
    }

    void check_finite() const {
        for (const auto& l : layers) {
            for (T v : l.w)
                if (!is_finite(v)) throw NumericError("non-finite mlp weight");
            for (T v : l.b)
                if (!is_finite(v)) throw NumericError("non-finite mlp bias");
        }
    }

    template <typename U>
    Mlp<U> cast() const {
        Mlp<U> net;
        for (const auto& l : layers) {
            typename Mlp<U>::Layer lu;
            lu.in = l.in;
            lu.out = l.out;
            lu.act = l.act;
            lu.w.assign(l.w.begin(), l.w.end());
            lu.b.assign(l.b.begin(), l.b.end());
            net.layers.push_back(std::move(lu));
        }
        return net;
    }
};

// Parameter-shaped gradient accumulator.
template <typename T>
struct MlpGrads {
    std::vector<std::vector<T>> w;
    std::vector<std::vector<T>> b;

    explicit MlpGrads(const Mlp<T>& net) {
        for (const auto& l : net.layers) {
            w.emplace_back(l.w.size(), T(0));
            b.emplace_back(l.b.size(), T(0));
        }
    }
    MlpGrads() = default;

    void zero() {
        for (auto& v : w) std::fill(v.begin(), v.end(), T(0));
        for (auto& v : b) std::fill(v.begin(), v.end(), T(0));
    }

    void add(const MlpGrads& o) {
        for (std::size_t l = 0; l < w.size(); ++l) {
            for (std::size_t i = 0; i < w[l].size(); ++i) w[l][i] += o.w[l][i];
            for (std::size_t i = 0; i < b[l].size(); ++i) b[l][i] += o.b[l][i];
        }
    }
};

// Post-activation values cached during forward; acts[0] is the input.
template <typename T>
struct MlpTrace {
    std::vector<std::vector<T>> acts;
};

template <typename T>
void mlp_forward(const Mlp<T>& net, std::span<const T> input, MlpTrace<T>& trace,
                 std::vector<T>& output) {
    if (int(input.size()) != net.input_dim())
        throw std::invalid_argument("mlp input dimension mismatch");
    for (T v : input)
        if (!is_finite(v)) throw NumericError("non-finite mlp input");

    trace.acts.assign(net.layers.size() + 1, {});
    trace.acts[0].assign(input.begin(), input.end());

    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& layer = net.layers[l];
        const auto& x = trace.acts[l];
        auto& a = trace.acts[l + 1];
        a.assign(layer.out, T(0));
        for (int o = 0; o < layer.out; ++o) {
            T z = layer.b[o];
            const T* wrow = layer.w.data() + std::size_t(o) * layer.in;
            for (int i = 0; i < layer.in; ++i) z += wrow[i] * x[i];
            switch (layer.act) {
                case Activation::Linear: a[o] = z; break;
                case Activation::Relu: a[o] = z > T(0) ? z : T(0); break;
                case Activation::Sigmoid: a[o] = sigmoid(z); break;
            }
        }
    }
    output = trace.acts.back();
    for (T v : output)
        if (!is_finite(v)) throw NumericError("non-finite mlp output");
}

// Accumulates parameter gradients into `grads` and writes dL/dinput.
template <typename T>
void mlp_backward(const Mlp<T>& net, const MlpTrace<T>& trace, std::span<const T> d_output,
                  MlpGrads<T>& grads, std::vector<T>& d_input) {
    if (int(d_output.size()) != net.output_dim())
        throw std::invalid_argument("mlp output gradient dimension mismatch");
    if (trace.acts.size() != net.layers.size() + 1)
        throw std::invalid_argument("mlp trace does not match network");

    std::vector<T> delta(d_output.begin(), d_output.end());
    std::vector<T> next;
    for (int l = int(net.layers.size()) - 1; l >= 0; --l) {
        const auto& layer = net.layers[l];
        const auto& x = trace.acts[l];
        const auto& a = trace.acts[l + 1];

        for (int o = 0; o < layer.out; ++o) {
            switch (layer.act) {
                case Activation::Linear: break;
                case Activation::Relu:
                    if (!(a[o] > T(0))) delta[o] = T(0);
                    break;
                case Activation::Sigmoid: delta[o] *= sigmoid_grad_from_value(a[o]); break;
            }
        }

        next.assign(layer.in, T(0));
        T* gw = grads.w[l].data();
        for (int o = 0; o < layer.out; ++o) {
            const T d = delta[o];
            grads.b[l][o] += d;
            const T* wrow = layer.w.data() + std::size_t(o) * layer.in;
            T* gwrow = gw + std::size_t(o) * layer.in;
            for (int i = 0; i < layer.in; ++i) {
                gwrow[i] += d * x[i];
                next[i] += wrow[i] * d;
            }
        }
        delta.swap(next);
    }
    d_input = std::move(delta);
}

}  // namespace nvs
