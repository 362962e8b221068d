#pragma once

#include "glioplan/autograd.hpp"
#include "glioplan/rng.hpp"
#include "glioplan/volume.hpp"

namespace glioplan::nn {

// Ordered, named parameter registry. Iteration order is creation order, so
// optimizer state and serialization are deterministic.
class ParamStore {
public:
    ad::Var create(const std::string& name, std::vector<int> shape, std::vector<double> init);

    std::size_t count() const { return entries_.size(); }
    ad::Var var(std::size_t i) const { return ad::Var(entries_[i].node); }
    const std::string& name(std::size_t i) const { return entries_[i].name; }

    void zero_grads();
    std::size_t total_params() const;

    // Weight container: magic "MWT1", u32 tensor count, then per tensor
    // u32 name length + name bytes, u32 ndim, u32 dims, little-endian f32 data.
    void save(const std::string& path) const;
    void load(const std::string& path); // names and shapes must match

private:
    struct Entry {
        std::string name;
        std::shared_ptr<ad::Node> node;
    };
    std::vector<Entry> entries_;
};

// ---- initializers ----
std::vector<double> he_init(Rng& rng, std::size_t n, std::size_t fan_in);
std::vector<double> xavier_init(Rng& rng, std::size_t n, std::size_t fan_in, std::size_t fan_out);
std::vector<double> zeros(std::size_t n);

// ---- layers ----

struct Linear {
    ad::Var w, b;
    Linear() = default;
    Linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng,
           bool tanh_gain = false);
    ad::Var forward(const ad::Var& x) const; // x: [n, in]
};

struct Conv2d {
    ad::Var w, b;
    int stride = 1, pad = 0;
    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& prefix, int in_ch, int out_ch, int kernel,
           int stride, int pad, Rng& rng, bool tanh_gain = false);
    ad::Var forward(const ad::Var& x) const; // x: [C, H, W]
};

struct Conv3d {
    ad::Var w, b;
    int stride = 1, pad = 0;
    Conv3d() = default;
    Conv3d(ParamStore& ps, const std::string& prefix, int in_ch, int out_ch, int kernel,
           int stride, int pad, Rng& rng);
    ad::Var forward(const ad::Var& x) const; // x: [C, Z, Y, X]
};

struct LayerNorm {
    ad::Var gain, bias;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& prefix, int dim);
    ad::Var forward(const ad::Var& x) const; // x: [n, dim]
};

// Volume <-> graph bridging (channel-major layouts line up exactly).
ad::Var volume_const(const Volume& v);
Volume var_to_volume(const ad::Var& x); // x: [C, Z, Y, X]

} // namespace glioplan::nn
