#include "glioplan/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace glioplan::nn {

ad::Var ParamStore::create(const std::string& name, std::vector<int> shape,
                           std::vector<double> init) {
    for (const Entry& e : entries_)
        if (e.name == name) throw ad::AutogradError("duplicate parameter name: " + name);
    ad::Var v = ad::parameter(std::move(shape), std::move(init));
    entries_.push_back({name, v.node()});
    return v;
}

void ParamStore::zero_grads() {
    for (Entry& e : entries_) e.node->grad.assign(e.node->value.size(), 0.0);
}

std::size_t ParamStore::total_params() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.node->value.size();
    return n;
}

namespace {
void put_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}
std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
} // namespace

void ParamStore::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ad::AutogradError("cannot open weights file for write: " + path);
    os.write("MWT1", 4);
    put_u32(os, static_cast<std::uint32_t>(entries_.size()));
    for (const Entry& e : entries_) {
        put_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put_u32(os, static_cast<std::uint32_t>(e.node->shape.size()));
        for (int d : e.node->shape) put_u32(os, static_cast<std::uint32_t>(d));
        std::vector<float> buf(e.node->value.size());
        for (std::size_t i = 0; i < buf.size(); ++i)
            buf[i] = static_cast<float>(e.node->value[i]);
        os.write(reinterpret_cast<const char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!os) throw ad::AutogradError("short write: " + path);
}

void ParamStore::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ad::AutogradError("cannot open weights file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MWT1", 4) != 0)
        throw ad::AutogradError("bad weights magic: " + path);
    std::uint32_t count = get_u32(is);
    if (count != entries_.size()) throw ad::AutogradError("weights tensor count mismatch: " + path);
    for (Entry& e : entries_) {
        std::uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (name != e.name) throw ad::AutogradError("weights name mismatch: " + name + " vs " + e.name);
        std::uint32_t ndim = get_u32(is);
        std::vector<int> shape(ndim);
        for (std::uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(get_u32(is));
        if (shape != e.node->shape) throw ad::AutogradError("weights shape mismatch: " + name);
        std::vector<float> buf(e.node->value.size());
        is.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!is) throw ad::AutogradError("truncated weights: " + path);
        for (std::size_t i = 0; i < buf.size(); ++i)
            e.node->value[i] = static_cast<double>(buf[i]);
    }
}

std::vector<double> he_init(Rng& rng, std::size_t n, std::size_t fan_in) {
    double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> out(n);
    for (double& v : out) v = rng.normal() * scale;
    return out;
}

std::vector<double> xavier_init(Rng& rng, std::size_t n, std::size_t fan_in, std::size_t fan_out) {
    double scale = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> out(n);
    for (double& v : out) v = rng.normal() * scale;
    return out;
}

std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

Linear::Linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng,
               bool tanh_gain) {
    std::size_t n = static_cast<std::size_t>(in) * out;
    auto init = tanh_gain ? xavier_init(rng, n, in, out) : he_init(rng, n, in);
    w = ps.create(prefix + ".w", {in, out}, std::move(init));
    b = ps.create(prefix + ".b", {1, out}, zeros(out));
}

ad::Var Linear::forward(const ad::Var& x) const { return ad::add_rowvec(ad::matmul(x, w), b); }

Conv2d::Conv2d(ParamStore& ps, const std::string& prefix, int in_ch, int out_ch, int kernel,
               int stride_, int pad_, Rng& rng, bool tanh_gain)
    : stride(stride_), pad(pad_) {
    std::size_t fan_in = static_cast<std::size_t>(in_ch) * kernel * kernel;
    std::size_t n = static_cast<std::size_t>(out_ch) * fan_in;
    auto init = tanh_gain ? xavier_init(rng, n, fan_in, static_cast<std::size_t>(out_ch) * kernel * kernel)
                          : he_init(rng, n, fan_in);
    w = ps.create(prefix + ".w", {out_ch, in_ch, kernel, kernel}, std::move(init));
    b = ps.create(prefix + ".b", {out_ch}, zeros(out_ch));
}

ad::Var Conv2d::forward(const ad::Var& x) const { return ad::conv2d(x, w, b, stride, pad); }

Conv3d::Conv3d(ParamStore& ps, const std::string& prefix, int in_ch, int out_ch, int kernel,
               int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
    std::size_t fan_in = static_cast<std::size_t>(in_ch) * kernel * kernel * kernel;
    std::size_t n = static_cast<std::size_t>(out_ch) * fan_in;
    w = ps.create(prefix + ".w", {out_ch, in_ch, kernel, kernel, kernel}, he_init(rng, n, fan_in));
    b = ps.create(prefix + ".b", {out_ch}, zeros(out_ch));
}

ad::Var Conv3d::forward(const ad::Var& x) const { return ad::conv3d(x, w, b, stride, pad); }

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, int dim) {
    gain = ps.create(prefix + ".g", {1, dim}, std::vector<double>(dim, 1.0));
    bias = ps.create(prefix + ".b", {1, dim}, zeros(dim));
}

ad::Var LayerNorm::forward(const ad::Var& x) const { return ad::layer_norm(x, gain, bias); }

ad::Var volume_const(const Volume& v) {
    return ad::constant({v.channels(), v.zdim(), v.ydim(), v.xdim()}, v.data());
}

Volume var_to_volume(const ad::Var& x) {
    if (x.shape().size() != 4) throw ad::AutogradError("var_to_volume: expected [C,Z,Y,X]");
    Volume v(x.shape()[0], x.shape()[3], x.shape()[2], x.shape()[1]);
    v.data() = x.value();
    return v;
}

} // namespace glioplan::nn
