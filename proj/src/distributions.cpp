#include "sisrnn/distributions.hpp"

#include <cmath>
#include <stdexcept>

namespace sisrnn {

namespace {
constexpr double kHalfLog2Pi = 0.9189385332046727417803297;  // ln(2*pi)/2

void check_pair(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

void check_scale(const Tensor& s, const char* what) {
    if ((s.mat().array() <= 0.0).any())
        throw std::invalid_argument(std::string(what) + ": scale has a nonpositive entry");
}
}  // namespace

double gaussian_log_density(const Tensor& x, const DiagGaussian& d) {
    check_pair(d.mean, d.scale, "gaussian_log_density");
    check_pair(x, d.mean, "gaussian_log_density");
    check_scale(d.scale, "gaussian_log_density");
    const auto mu = d.mean.mat().array();
    const auto sigma = d.scale.mat().array();
    const auto xs = x.mat().array();
    return (-kHalfLog2Pi - sigma.log() - (xs - mu).square() / (2.0 * sigma.square())).sum();
}

double gaussian_kl(const DiagGaussian& q, const DiagGaussian& p) {
    check_pair(q.mean, q.scale, "gaussian_kl");
    check_pair(p.mean, p.scale, "gaussian_kl");
    check_pair(q.mean, p.mean, "gaussian_kl");
    check_scale(q.scale, "gaussian_kl");
    check_scale(p.scale, "gaussian_kl");
    const auto mq = q.mean.mat().array();
    const auto sq = q.scale.mat().array();
    const auto mp = p.mean.mat().array();
    const auto sp = p.scale.mat().array();
    return (sp.log() - sq.log() + (sq.square() + (mq - mp).square()) / (2.0 * sp.square()) - 0.5).sum();
}

Tensor reparam_sample(const DiagGaussian& d, const Tensor& eps) {
    check_pair(d.mean, d.scale, "reparam_sample");
    check_pair(eps, d.mean, "reparam_sample");
    Tensor z = d.mean;
    z.mat().array() += d.scale.mat().array() * eps.mat().array();
    return z;
}

double bernoulli_log_likelihood(const Tensor& x, const Tensor& probs) {
    check_pair(x, probs, "bernoulli_log_likelihood");
    constexpr double kEps = 1e-7;
    double ll = 0.0;
    auto xv = x.values();
    auto pv = probs.values();
    for (size_t i = 0; i < xv.size(); ++i) {
        if (xv[i] != 0.0 && xv[i] != 1.0)
            throw std::invalid_argument("bernoulli_log_likelihood: x entry " + std::to_string(i) + " is not 0/1");
        const double p = std::min(std::max(pv[i], kEps), 1.0 - kEps);
        ll += xv[i] == 1.0 ? std::log(p) : std::log1p(-p);
    }
    return ll;
}

Index NoiseSpec::total_dims() const {
    Index t = 0;
    for (Index d : dims) t += d;
    return t;
}

void NoiseSpec::validate() const {
    if (dims.empty()) throw std::invalid_argument("NoiseSpec: dims-per-layer must be nonempty");
    for (Index d : dims)
        if (d < 0) throw std::invalid_argument("NoiseSpec: negative layer dimension");
    if (kind == Kind::kBernoulli && !(p > 0.0 && p < 1.0))
        throw std::invalid_argument("NoiseSpec: bernoulli p must lie in (0,1)");
}

std::vector<Tensor> sample_noise(const NoiseSpec& spec, RngState& rng) {
    auto layers = sample_noise_rows(spec, 1, rng);
    for (auto& t : layers) t = t.reshape({t.cols()});
    return layers;
}

std::vector<Tensor> sample_noise_rows(const NoiseSpec& spec, Index rows, RngState& rng) {
    spec.validate();
    std::vector<Tensor> out;
    out.reserve(spec.dims.size());
    for (Index d : spec.dims) {
        Tensor t = Tensor::zeros({rows, d});
        auto v = t.values_mut();
        for (double& x : v)
            x = spec.kind == NoiseSpec::Kind::kBernoulli ? (rng.bernoulli(spec.p) ? 1.0 : 0.0) : rng.normal();
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace sisrnn
