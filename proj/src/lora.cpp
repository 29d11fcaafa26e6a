#include "loraseg/lora.hpp"

#include <cmath>
#include <random>

#include <json.hpp>

namespace loraseg {

std::string to_string(Projection p) {
    switch (p) {
    case Projection::q: return "q";
    case Projection::k: return "k";
    case Projection::v: return "v";
    case Projection::out: return "out";
    }
    return "?";
}

Projection projection_from_string(const std::string &name) {
    if (name == "q") return Projection::q;
    if (name == "k") return Projection::k;
    if (name == "v") return Projection::v;
    if (name == "out") return Projection::out;
    throw std::invalid_argument("unknown projection '" + name + "' (expected q, k, v or out)");
}

void LoraConfig::validate() const {
    if (rank < 1) throw std::invalid_argument("lora rank must be positive, got " + std::to_string(rank));
    if (!apply_to_encoder && !apply_to_decoder)
        throw std::invalid_argument("lora config applies to neither encoder nor decoder");
    if (targets.empty()) throw std::invalid_argument("lora config has no target projections");
    if (!(effective_alpha() > 0.0) || !std::isfinite(effective_alpha()))
        throw std::invalid_argument("lora alpha must be positive and finite");
    if (!(init_std >= 0.0)) throw std::invalid_argument("lora init_std must be non-negative");
}

std::string LoraConfig::to_text() const {
    nlohmann::json j;
    j["rank"] = rank;
    j["alpha"] = effective_alpha();
    j["apply_to_encoder"] = apply_to_encoder;
    j["apply_to_decoder"] = apply_to_decoder;
    std::vector<std::string> names;
    for (auto p : targets) names.push_back(to_string(p));
    j["targets"] = names;
    j["init_std"] = init_std;
    j["seed"] = seed;
    return j.dump();
}

LoraConfig LoraConfig::from_text(const std::string &text) {
    const auto j = nlohmann::json::parse(text);
    LoraConfig c;
    c.rank = j.at("rank").get<int>();
    c.alpha = j.at("alpha").get<double>();
    c.apply_to_encoder = j.at("apply_to_encoder").get<bool>();
    c.apply_to_decoder = j.at("apply_to_decoder").get<bool>();
    c.targets.clear();
    for (const auto &n : j.at("targets")) c.targets.insert(projection_from_string(n.get<std::string>()));
    c.init_std = j.at("init_std").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

template <typename T>
LoraAdapter<T>::LoraAdapter(int d_in, int d_out, int rank, double alpha, double init_std, std::uint64_t seed)
    : a_({rank, d_in}), b_({d_out, rank}), alpha_(alpha) {
    if (rank < 1 || d_in < 1 || d_out < 1)
        throw ShapeError("lora adapter needs positive rank and dims, got r=" + std::to_string(rank) +
                         " d_in=" + std::to_string(d_in) + " d_out=" + std::to_string(d_out));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, init_std);
    for (auto &v : a_.mutable_data()) v = static_cast<T>(dist(rng));
    a_.set_requires_grad(true);
    b_.set_requires_grad(true);
}

template <typename T>
LoraAdapter<T>::LoraAdapter(Tensor<T> a, Tensor<T> b, double alpha) : a_(std::move(a)), b_(std::move(b)), alpha_(alpha) {
    if (a_.rank() != 2 || b_.rank() != 2 || a_.dim(0) != b_.dim(1))
        throw ShapeError("lora factors must be A[r x d_in] and B[d_out x r], got " + shape_str(a_.shape()) + " and " +
                         shape_str(b_.shape()));
    a_.set_requires_grad(true);
    b_.set_requires_grad(true);
}

template <typename T>
Tensor<T> LoraAdapter<T>::delta_weight() const {
    const auto r = a_.dim(0), n = a_.dim(1), m = b_.dim(0);
    Tensor<T> out({m, n});
    auto o = out.mutable_data();
    const auto a = a_.data(), b = b_.data();
    const double s = scale();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::int64_t p = 0; p < r; ++p) acc += double(b[i * r + p]) * double(a[p * n + j]);
            o[i * n + j] = static_cast<T>(s * acc);
        }
    return out;
}

template <typename T>
Tensor<T> lora_forward(const LoraAdapter<T> &adapter, const Tensor<T> &x, const Tensor<T> &weight,
                       const Tensor<T> &bias) {
    if (weight.rank() != 2 || weight.dim(0) != adapter.d_out() || weight.dim(1) != adapter.d_in())
        throw ShapeError("lora_forward: weight " + shape_str(weight.shape()) + " does not match adapter [" +
                         std::to_string(adapter.d_out()) + "x" + std::to_string(adapter.d_in()) + "]");
    Tensor<T> y = matmul_nt(x, weight);
    if (bias.defined()) y = add_bias(y, bias);
    const Tensor<T> low = matmul_nt(matmul_nt(x, adapter.a()), adapter.b());
    return add(y, mul_scalar(low, static_cast<T>(adapter.scale())));
}

template <typename T>
Tensor<T> merge(LoraAdapter<T> &adapter, const Tensor<T> &weight) {
    if (adapter.merged()) throw std::logic_error("merge: adapter is already merged");
    if (weight.rank() != 2 || weight.dim(0) != adapter.d_out() || weight.dim(1) != adapter.d_in())
        throw ShapeError("merge: weight " + shape_str(weight.shape()) + " does not match adapter");
    Tensor<T> merged = adapter.delta_weight();
    auto m = merged.mutable_data();
    const auto w = weight.data();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = w[i] + m[i];
    adapter.mark_merged();
    return merged;
}

template class LoraAdapter<float>;
template class LoraAdapter<double>;
template Tensor<float> lora_forward(const LoraAdapter<float> &, const Tensor<float> &, const Tensor<float> &,
                                    const Tensor<float> &);
template Tensor<double> lora_forward(const LoraAdapter<double> &, const Tensor<double> &, const Tensor<double> &,
                                     const Tensor<double> &);
template Tensor<float> merge(LoraAdapter<float> &, const Tensor<float> &);
template Tensor<double> merge(LoraAdapter<double> &, const Tensor<double> &);

} // namespace loraseg
