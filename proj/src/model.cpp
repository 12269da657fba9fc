#include "bidshade/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace bidshade {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

const char* transform_name(NumericTransform t) {
    switch (t) {
        case NumericTransform::kIdentity: return "identity";
        case NumericTransform::kLog1p: return "log1p";
        case NumericTransform::kLogit: return "logit";
    }
    return "identity";
}

NumericTransform transform_from_name(const std::string& name) {
    if (name == "identity") return NumericTransform::kIdentity;
    if (name == "log1p") return NumericTransform::kLog1p;
    if (name == "logit") return NumericTransform::kLogit;
    throw ConfigError("unknown numeric transform '" + name + "'");
}

NumericSpec fit_numeric(const std::string& name, NumericTransform transform,
                        const std::vector<double>& values) {
    NumericSpec spec;
    spec.name = name;
    spec.transform = transform;
    double sum = 0.0, sumsq = 0.0;
    for (double v : values) {
        double t = v;
        switch (transform) {
            case NumericTransform::kIdentity: t = v; break;
            case NumericTransform::kLog1p: t = std::log1p(std::max(v, 0.0)); break;
            case NumericTransform::kLogit: t = logit(std::clamp(v, 1e-9, 1.0 - 1e-9)); break;
        }
        sum += t;
        sumsq += t * t;
    }
    const double n = std::max<std::size_t>(values.size(), 1);
    spec.mean = sum / n;
    spec.stdev = std::max(std::sqrt(std::max(0.0, sumsq / n - spec.mean * spec.mean)), 1e-6);
    return spec;
}

void ModelConfig::validate() const {
    if (fields.empty()) throw ConfigError("model: no categorical fields");
    for (const auto& f : fields)
        if (f.vocab < 1) throw ConfigError("model: field '" + f.name + "' vocab < 1");
    for (const auto& n : numerics) {
        if (n.name.empty()) throw ConfigError("model: unnamed numeric input");
        if (!(n.stdev > 0.0)) throw ConfigError("model: numeric stdev must be positive");
    }
    if (embed_dim < 1) throw ConfigError("model: embed_dim < 1");
    for (int h : hidden)
        if (h < 1) throw ConfigError("model: hidden width < 1");
    if (heads < 1) throw ConfigError("model: heads < 1");
}

// ------------------------------------------------------------- EmbeddingTable

std::shared_ptr<EmbeddingTable> EmbeddingTable::create(const std::vector<FieldDef>& fields, int dim,
                                                       std::uint64_t seed) {
    auto table = std::make_shared<EmbeddingTable>();
    table->dim = dim;
    table->field.resize(fields.size());
    Rng rng(seed);
    const double amp = 1.0 / std::sqrt(static_cast<double>(dim));
    for (std::size_t f = 0; f < fields.size(); ++f) {
        auto& mat = table->field[f];
        mat.resize(static_cast<std::size_t>(fields[f].vocab) * static_cast<std::size_t>(dim));
        for (auto& w : mat) w = rng.uniform(-amp, amp);
    }
    return table;
}

namespace {

void fnv_f32(const std::vector<double>& data, std::uint64_t& h) {
    for (double d : data) {
        float f = static_cast<float>(d);
        unsigned char bytes[4];
        std::memcpy(bytes, &f, 4);
        h = fnv1a64(bytes, 4, h);
    }
}

}  // namespace

std::uint64_t EmbeddingTable::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& mat : field) fnv_f32(mat, h);
    return h;
}

// ----------------------------------------------------------------- GradBuffer

void GradBuffer::init_like(const std::vector<TensorRef>& tensors) {
    g.clear();
    for (const auto& t : tensors)
        if (t.trainable) g[t.name].assign(t.data->size(), 0.0);
}

void GradBuffer::zero() {
    for (auto& [name, vec] : g) std::fill(vec.begin(), vec.end(), 0.0);
}

// ------------------------------------------------------------------ BaseModel

BaseModel::BaseModel(ModelConfig cfg, std::shared_ptr<EmbeddingTable> shared, std::uint64_t seed)
    : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int F = cfg_.n_fields(), J = cfg_.n_numerics(), d = cfg_.embed_dim;

    if (shared) {
        if (shared->dim != d) throw ConfigError("model: shared embedding dim mismatch");
        if (shared->field.size() != cfg_.fields.size())
            throw ConfigError("model: shared embedding field count mismatch");
        embed_ = std::move(shared);
        owns_embed_ = false;
    } else {
        embed_ = EmbeddingTable::create(cfg_.fields, d, mix_seed(seed, 0xe3bed));
        owns_embed_ = true;
    }

    Rng rng(mix_seed(seed, 0x1417));
    lin_.resize(static_cast<std::size_t>(F));
    for (int f = 0; f < F; ++f)
        lin_[static_cast<std::size_t>(f)].assign(
            static_cast<std::size_t>(cfg_.fields[static_cast<std::size_t>(f)].vocab), 0.0);
    lin_num_.assign(static_cast<std::size_t>(J), 0.0);

    const double amp = 1.0 / std::sqrt(static_cast<double>(d));
    num_p_.resize(static_cast<std::size_t>(J));
    num_q_.resize(static_cast<std::size_t>(J));
    for (int j = 0; j < J; ++j) {
        num_p_[static_cast<std::size_t>(j)].resize(static_cast<std::size_t>(d));
        num_q_[static_cast<std::size_t>(j)].resize(static_cast<std::size_t>(d));
        for (auto& w : num_p_[static_cast<std::size_t>(j)]) w = rng.uniform(-amp, amp);
        for (auto& w : num_q_[static_cast<std::size_t>(j)]) w = rng.uniform(-amp, amp);
    }

    const int L = static_cast<int>(cfg_.hidden.size());
    w_.resize(static_cast<std::size_t>(L));
    b_.resize(static_cast<std::size_t>(L));
    int prev = in_dim();
    for (int l = 0; l < L; ++l) {
        const int h = cfg_.hidden[static_cast<std::size_t>(l)];
        const double wamp = 1.0 / std::sqrt(static_cast<double>(prev));
        w_[static_cast<std::size_t>(l)].resize(static_cast<std::size_t>(h) * static_cast<std::size_t>(prev));
        for (auto& w : w_[static_cast<std::size_t>(l)]) w = rng.uniform(-wamp, wamp);
        b_[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(h), 0.0);
        prev = h;
    }
    const double oamp = 1.0 / std::sqrt(static_cast<double>(prev));
    out_w_.resize(static_cast<std::size_t>(cfg_.heads) * static_cast<std::size_t>(prev));
    for (auto& w : out_w_) w = rng.uniform(-oamp, oamp);
    out_b_.assign(static_cast<std::size_t>(cfg_.heads), cfg_.out_bias_init);
}

void BaseModel::forward(const int* cats, const double* nums, Tape& t) const {
    const int F = cfg_.n_fields(), J = cfg_.n_numerics(), d = cfg_.embed_dim;
    const int in = in_dim();

    t.cats.assign(cats, cats + F);
    for (int f = 0; f < F; ++f) {
        if (cats[f] < 0 || cats[f] >= cfg_.fields[static_cast<std::size_t>(f)].vocab)
            throw ConfigError("model: out-of-vocabulary id for field '" +
                              cfg_.fields[static_cast<std::size_t>(f)].name + "'");
    }

    t.nums_raw.assign(nums, nums + J);
    t.nums_std.resize(static_cast<std::size_t>(J));
    t.dstd_draw.resize(static_cast<std::size_t>(J));
    for (int j = 0; j < J; ++j) {
        const NumericSpec& spec = cfg_.numerics[static_cast<std::size_t>(j)];
        double v = nums[j], tv = 0.0, dt = 1.0;
        switch (spec.transform) {
            case NumericTransform::kIdentity:
                tv = v;
                dt = 1.0;
                break;
            case NumericTransform::kLog1p: {
                const double vv = std::max(v, 0.0);
                tv = std::log1p(vv);
                dt = 1.0 / (1.0 + vv);
                break;
            }
            case NumericTransform::kLogit: {
                const double p = std::clamp(v, 1e-9, 1.0 - 1e-9);
                tv = std::log(p / (1.0 - p));
                dt = 1.0 / (p * (1.0 - p));
                break;
            }
        }
        t.nums_std[static_cast<std::size_t>(j)] = (tv - spec.mean) / spec.stdev;
        t.dstd_draw[static_cast<std::size_t>(j)] = dt / spec.stdev;
    }

    t.z0.assign(static_cast<std::size_t>(in), 0.0);
    t.sumv.assign(static_cast<std::size_t>(d), 0.0);
    double sumsq = 0.0;
    for (int f = 0; f < F; ++f) {
        const double* e =
            &embed_->field[static_cast<std::size_t>(f)][static_cast<std::size_t>(cats[f]) * static_cast<std::size_t>(d)];
        double* seg = &t.z0[static_cast<std::size_t>(f) * static_cast<std::size_t>(d)];
        for (int c = 0; c < d; ++c) {
            seg[c] = e[c];
            t.sumv[static_cast<std::size_t>(c)] += e[c];
            sumsq += e[c] * e[c];
        }
    }
    for (int j = 0; j < J; ++j) {
        const double n = t.nums_std[static_cast<std::size_t>(j)];
        const auto& p = num_p_[static_cast<std::size_t>(j)];
        const auto& q = num_q_[static_cast<std::size_t>(j)];
        double* seg = &t.z0[static_cast<std::size_t>(F + j) * static_cast<std::size_t>(d)];
        for (int c = 0; c < d; ++c) {
            seg[c] = p[static_cast<std::size_t>(c)] * n + q[static_cast<std::size_t>(c)];
            t.sumv[static_cast<std::size_t>(c)] += seg[c];
            sumsq += seg[c] * seg[c];
        }
    }
    double ss = 0.0;
    for (int c = 0; c < d; ++c) ss += t.sumv[static_cast<std::size_t>(c)] * t.sumv[static_cast<std::size_t>(c)];
    t.fm = 0.5 * (ss - sumsq);

    t.lo = 0.0;
    for (int f = 0; f < F; ++f)
        t.lo += lin_[static_cast<std::size_t>(f)][static_cast<std::size_t>(cats[f])];
    for (int j = 0; j < J; ++j)
        t.lo += lin_num_[static_cast<std::size_t>(j)] * t.nums_std[static_cast<std::size_t>(j)];

    const int L = static_cast<int>(cfg_.hidden.size());
    t.acts.resize(static_cast<std::size_t>(L));
    const std::vector<double>* prev = &t.z0;
    for (int l = 0; l < L; ++l) {
        const int h = cfg_.hidden[static_cast<std::size_t>(l)];
        const int pn = static_cast<int>(prev->size());
        auto& act = t.acts[static_cast<std::size_t>(l)];
        act.assign(static_cast<std::size_t>(h), 0.0);
        const auto& W = w_[static_cast<std::size_t>(l)];
        const auto& B = b_[static_cast<std::size_t>(l)];
        for (int i = 0; i < h; ++i) {
            double z = B[static_cast<std::size_t>(i)];
            const double* row = &W[static_cast<std::size_t>(i) * static_cast<std::size_t>(pn)];
            for (int p = 0; p < pn; ++p) z += row[p] * (*prev)[static_cast<std::size_t>(p)];
            act[static_cast<std::size_t>(i)] = z > 0.0 ? z : 0.0;
        }
        prev = &act;
    }

    const int hl = static_cast<int>(prev->size());
    t.logits.resize(static_cast<std::size_t>(cfg_.heads));
    for (int h = 0; h < cfg_.heads; ++h) {
        double z = out_b_[static_cast<std::size_t>(h)];
        const double* row = &out_w_[static_cast<std::size_t>(h) * static_cast<std::size_t>(hl)];
        for (int p = 0; p < hl; ++p) z += row[p] * (*prev)[static_cast<std::size_t>(p)];
        t.logits[static_cast<std::size_t>(h)] = z + t.fm + t.lo;
    }
    t.ready = true;
}

double BaseModel::logit1(const int* cats, const double* nums, Tape& tape) const {
    forward(cats, nums, tape);
    return tape.logits[0];
}

void BaseModel::backward(const Tape& t, const double* dlogits, GradBuffer* grads,
                         double* dnums) const {
    if (!t.ready) throw UsageError("model: backward before forward");
    const int F = cfg_.n_fields(), J = cfg_.n_numerics(), d = cfg_.embed_dim;
    const int L = static_cast<int>(cfg_.hidden.size());
    const int in = in_dim();

    double s = 0.0;  // gradient reaching the shared fm + lo terms
    for (int h = 0; h < cfg_.heads; ++h) s += dlogits[h];

    // Output head.
    const std::vector<double>& last = L > 0 ? t.acts[static_cast<std::size_t>(L - 1)] : t.z0;
    const int hl = static_cast<int>(last.size());
    std::vector<double> da(last.size(), 0.0);
    for (int h = 0; h < cfg_.heads; ++h) {
        const double g = dlogits[h];
        const double* row = &out_w_[static_cast<std::size_t>(h) * static_cast<std::size_t>(hl)];
        for (int p = 0; p < hl; ++p) da[static_cast<std::size_t>(p)] += g * row[p];
        if (grads) {
            auto& gow = grads->at("out.w");
            auto& gob = grads->at("out.b");
            for (int p = 0; p < hl; ++p)
                gow[static_cast<std::size_t>(h) * static_cast<std::size_t>(hl) + static_cast<std::size_t>(p)] +=
                    g * last[static_cast<std::size_t>(p)];
            gob[static_cast<std::size_t>(h)] += g;
        }
    }

    // Hidden layers, in reverse.
    for (int l = L - 1; l >= 0; --l) {
        const std::vector<double>& act = t.acts[static_cast<std::size_t>(l)];
        const std::vector<double>& prev = l > 0 ? t.acts[static_cast<std::size_t>(l - 1)] : t.z0;
        const int h = static_cast<int>(act.size());
        const int pn = static_cast<int>(prev.size());
        const auto& W = w_[static_cast<std::size_t>(l)];
        std::vector<double> dprev(prev.size(), 0.0);
        auto* gw = grads ? &grads->at("mlp.w" + std::to_string(l + 1)) : nullptr;
        auto* gb = grads ? &grads->at("mlp.b" + std::to_string(l + 1)) : nullptr;
        for (int i = 0; i < h; ++i) {
            if (!(act[static_cast<std::size_t>(i)] > 0.0)) continue;  // ReLU mask
            const double g = da[static_cast<std::size_t>(i)];
            const double* row = &W[static_cast<std::size_t>(i) * static_cast<std::size_t>(pn)];
            for (int p = 0; p < pn; ++p) dprev[static_cast<std::size_t>(p)] += g * row[p];
            if (grads) {
                for (int p = 0; p < pn; ++p)
                    (*gw)[static_cast<std::size_t>(i) * static_cast<std::size_t>(pn) + static_cast<std::size_t>(p)] +=
                        g * prev[static_cast<std::size_t>(p)];
                (*gb)[static_cast<std::size_t>(i)] += g;
            }
        }
        da = std::move(dprev);
    }

    // `da` is now dL/dz0 from the MLP path; add the FM path.
    std::vector<double>& dz0 = da;
    dz0.resize(static_cast<std::size_t>(in), 0.0);
    for (int k = 0; k < F + J; ++k) {
        const double* seg = &t.z0[static_cast<std::size_t>(k) * static_cast<std::size_t>(d)];
        double* dseg = &dz0[static_cast<std::size_t>(k) * static_cast<std::size_t>(d)];
        for (int c = 0; c < d; ++c) dseg[c] += s * (t.sumv[static_cast<std::size_t>(c)] - seg[c]);
    }

    std::vector<double> dn(static_cast<std::size_t>(J), 0.0);

    // Embedding rows.
    if (grads && !embed_->frozen) {
        for (int f = 0; f < F; ++f) {
            auto& ge = grads->at("embed." + cfg_.fields[static_cast<std::size_t>(f)].name);
            const std::size_t base =
                static_cast<std::size_t>(t.cats[static_cast<std::size_t>(f)]) * static_cast<std::size_t>(d);
            const double* dseg = &dz0[static_cast<std::size_t>(f) * static_cast<std::size_t>(d)];
            for (int c = 0; c < d; ++c) ge[base + static_cast<std::size_t>(c)] += dseg[c];
        }
    }

    // Numeric pseudo-embeddings.
    for (int j = 0; j < J; ++j) {
        const double n = t.nums_std[static_cast<std::size_t>(j)];
        const auto& p = num_p_[static_cast<std::size_t>(j)];
        const double* dseg = &dz0[static_cast<std::size_t>(F + j) * static_cast<std::size_t>(d)];
        double dnj = 0.0;
        for (int c = 0; c < d; ++c) dnj += dseg[c] * p[static_cast<std::size_t>(c)];
        dn[static_cast<std::size_t>(j)] += dnj;
        if (grads) {
            auto& gp = grads->at("num_p." + cfg_.numerics[static_cast<std::size_t>(j)].name);
            auto& gq = grads->at("num_q." + cfg_.numerics[static_cast<std::size_t>(j)].name);
            for (int c = 0; c < d; ++c) {
                gp[static_cast<std::size_t>(c)] += dseg[c] * n;
                gq[static_cast<std::size_t>(c)] += dseg[c];
            }
        }
    }

    // First-order terms.
    if (grads) {
        for (int f = 0; f < F; ++f)
            grads->at("lin." + cfg_.fields[static_cast<std::size_t>(f)].name)
                [static_cast<std::size_t>(t.cats[static_cast<std::size_t>(f)])] += s;
        auto& gln = grads->at("lin_num");
        for (int j = 0; j < J; ++j)
            gln[static_cast<std::size_t>(j)] += s * t.nums_std[static_cast<std::size_t>(j)];
    }
    for (int j = 0; j < J; ++j)
        dn[static_cast<std::size_t>(j)] += s * lin_num_[static_cast<std::size_t>(j)];

    if (dnums) {
        for (int j = 0; j < J; ++j)
            dnums[j] = dn[static_cast<std::size_t>(j)] * t.dstd_draw[static_cast<std::size_t>(j)];
    }
}

std::vector<TensorRef> BaseModel::tensors() {
    std::vector<TensorRef> out;
    const int d = cfg_.embed_dim;
    for (int f = 0; f < cfg_.n_fields(); ++f) {
        const auto& name = cfg_.fields[static_cast<std::size_t>(f)].name;
        out.push_back({"embed." + name, &embed_->field[static_cast<std::size_t>(f)],
                       {cfg_.fields[static_cast<std::size_t>(f)].vocab, d}, !embed_->frozen});
    }
    for (int f = 0; f < cfg_.n_fields(); ++f) {
        const auto& name = cfg_.fields[static_cast<std::size_t>(f)].name;
        out.push_back({"lin." + name, &lin_[static_cast<std::size_t>(f)],
                       {cfg_.fields[static_cast<std::size_t>(f)].vocab}, true});
    }
    if (cfg_.n_numerics() > 0)
        out.push_back({"lin_num", &lin_num_, {cfg_.n_numerics()}, true});
    for (int j = 0; j < cfg_.n_numerics(); ++j) {
        const auto& name = cfg_.numerics[static_cast<std::size_t>(j)].name;
        out.push_back({"num_p." + name, &num_p_[static_cast<std::size_t>(j)], {d}, true});
        out.push_back({"num_q." + name, &num_q_[static_cast<std::size_t>(j)], {d}, true});
    }
    int prev = in_dim();
    for (int l = 0; l < static_cast<int>(cfg_.hidden.size()); ++l) {
        const int h = cfg_.hidden[static_cast<std::size_t>(l)];
        out.push_back({"mlp.w" + std::to_string(l + 1), &w_[static_cast<std::size_t>(l)], {h, prev}, true});
        out.push_back({"mlp.b" + std::to_string(l + 1), &b_[static_cast<std::size_t>(l)], {h}, true});
        prev = h;
    }
    out.push_back({"out.w", &out_w_, {cfg_.heads, prev}, true});
    out.push_back({"out.b", &out_b_, {cfg_.heads}, true});
    return out;
}

std::vector<TensorRef> BaseModel::tensors() const {
    return const_cast<BaseModel*>(this)->tensors();
}

std::uint64_t BaseModel::parameter_fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& t : tensors()) {
        h = fnv1a64(t.name.data(), t.name.size(), h);
        fnv_f32(*t.data, h);
    }
    return h;
}

double fm_interaction(const std::vector<std::vector<double>>& field_embeddings) {
    const std::size_t n = field_embeddings.size();
    if (n < 2) throw ConfigError("fm_interaction: need at least 2 fields");
    const std::size_t d = field_embeddings[0].size();
    for (const auto& e : field_embeddings)
        if (e.size() != d) throw ConfigError("fm_interaction: mismatched embedding dims");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += field_embeddings[i][c] * field_embeddings[j][c];
            total += dot;
        }
    return total;
}

// ------------------------------------------------------------------ optimizer

void adam_step(std::vector<TensorRef> tensors, GradBuffer& grads, AdamState& state,
               const AdamConfig& cfg) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (auto& tr : tensors) {
        if (!tr.trainable) continue;
        auto it = grads.g.find(tr.name);
        if (it == grads.g.end()) continue;
        const std::vector<double>& g = it->second;
        if (g.size() != tr.data->size())
            throw UsageError("adam_step: gradient shape mismatch for " + tr.name);
        auto& slot = state.slots[tr.name];
        if (slot.m.empty()) {
            slot.m.assign(g.size(), 0.0);
            slot.v.assign(g.size(), 0.0);
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i]))
                throw TrainError("adam_step: non-finite gradient in tensor '" + tr.name + "'");
            slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g[i];
            slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            (*tr.data)[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

// ----------------------------------------------------------------- grad check

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)});
}

GradCheckResult grad_check(BaseModel& model, const std::function<double()>& loss_value,
                           const std::function<void(GradBuffer&)>& loss_grad, double h) {
    GradBuffer grads;
    grads.init_like(model.tensors());
    loss_grad(grads);

    GradCheckResult result;
    for (auto& tr : model.tensors()) {
        if (!tr.trainable) continue;
        const auto& g = grads.at(tr.name);
        for (std::size_t i = 0; i < tr.data->size(); ++i) {
            double& theta = (*tr.data)[i];
            const double orig = theta;
            const double step = h * std::max(1.0, std::abs(orig));
            theta = orig + step;
            const double lp = loss_value();
            theta = orig - step;
            const double lm = loss_value();
            theta = orig;
            const double fd = (lp - lm) / (2.0 * step);
            const double err = rel_err(g[i], fd);
            if (err > result.max_rel_err) {
                result.max_rel_err = err;
                result.worst = tr.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return result;
}

}  // namespace bidshade
