#include "bidshade/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

namespace bidshade {

namespace {

constexpr std::uint64_t kTeacherSalt = 0x7ea0c1ef5a1eull;
constexpr std::uint64_t kBucketSalt = 0xb1dcafe0 + 0ull;

double to_unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

// C(n,k) rows for n <= 64; exact in double for this range of magnitudes.
std::vector<double> pascal_row(int n) {
    std::vector<double> row(static_cast<std::size_t>(n) + 1, 0.0);
    row[0] = 1.0;
    for (int i = 1; i <= n; ++i)
        for (int j = i; j >= 1; --j) row[static_cast<std::size_t>(j)] += row[static_cast<std::size_t>(j - 1)];
    return row;
}

// Gauss-Legendre nodes/weights on [-1,1], computed once per order by Newton
// iteration on the Legendre recurrence.
struct GaussLegendre {
    std::vector<double> x, w;
    explicit GaussLegendre(int n) : x(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n)) {
        for (int i = 0; i < n; ++i) {
            double t = std::cos(M_PI * (i + 0.75) / (n + 0.5));
            double dp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = t;
                for (int k = 2; k <= n; ++k) {
                    double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (t * p1 - p0) / (t * t - 1.0);
                double step = p1 / dp;
                t -= step;
                if (std::abs(step) < 1e-15) break;
            }
            x[static_cast<std::size_t>(i)] = t;
            w[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - t * t) * dp * dp);
        }
    }
};

const GaussLegendre& quad64() {
    static const GaussLegendre gl(64);
    return gl;
}

}  // namespace

// ---------------------------------------------------------------- FeatureSchema

int FeatureSchema::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < fields.size(); ++i)
        if (fields[i].name == name) return static_cast<int>(i);
    return -1;
}

void FeatureSchema::validate() const {
    if (fields.empty()) throw ConfigError("schema: no fields");
    for (const auto& f : fields) {
        if (f.name.empty()) throw ConfigError("schema: empty field name");
        if (f.vocab < 1) throw ConfigError("schema: field '" + f.name + "' has vocab size < 1");
    }
    if (index_of("scene") < 0) throw ConfigError("schema: missing 'scene' field");
    if (index_of("ad_bucket") < 0) throw ConfigError("schema: missing 'ad_bucket' field");
}

FeatureSchema FeatureSchema::defaults() {
    return FeatureSchema{{{"user_segment", 50},
                          {"scene", 8},
                          {"ad_bucket", 200},
                          {"hour", 24},
                          {"ad_category", 30},
                          {"device", 4}}};
}

// ---------------------------------------------------------------- LandscapeSpec

void LandscapeSpec::validate() const {
    schema.validate();
    if (scenes.empty()) throw ConfigError("landscape: no scenes");
    const int scene_vocab = schema.fields[static_cast<std::size_t>(scene_field())].vocab;
    if (n_scenes() > scene_vocab) throw ConfigError("landscape: more scenes than scene vocab");
    for (int s = 0; s < n_scenes(); ++s) {
        const SceneConfig& sc = scenes[static_cast<std::size_t>(s)];
        sc.profile.validate();
        if (sc.profile.scene_id != s) throw ConfigError("landscape: scene_id must equal scene index");
        if (sc.competitors < sc.profile.slots + 1)
            throw ConfigError("landscape: competitors must be >= slots+1");
        if (sc.competitors > 64) throw ConfigError("landscape: competitors > 64 unsupported");
        if (!(sc.bid_sigma > 0.0) || !(sc.value_sigma > 0.0))
            throw ConfigError("landscape: log-normal sigmas must be positive");
        if (ref_slot < 1 || ref_slot > sc.profile.slots)
            throw ConfigError("landscape: ref_slot outside scene slot range");
    }
    if (!(q_lo > 0.0) || !(q_hi < 1.0) || !(q_lo < q_hi))
        throw ConfigError("landscape: need 0 < q_lo < q_hi < 1");
    if (!(upstream_bias > 0.0)) throw ConfigError("landscape: upstream_bias must be positive");
    if (upstream_noise < 0.0) throw ConfigError("landscape: upstream_noise must be >= 0");
    if (!(mu0 > 0.0)) throw ConfigError("landscape: mu0 must be positive");
}

const SceneConfig& LandscapeSpec::scene(int scene_id) const {
    if (scene_id < 0 || scene_id >= n_scenes()) throw ConfigError("landscape: unknown scene id");
    return scenes[static_cast<std::size_t>(scene_id)];
}

int LandscapeSpec::scene_field() const { return schema.index_of("scene"); }
int LandscapeSpec::bucket_field() const { return schema.index_of("ad_bucket"); }

double LandscapeSpec::teacher_q(const FeatureVec& x) const {
    const double scale = teacher_amp / std::sqrt(static_cast<double>(schema.fields.size()));
    double z = 0.0;
    for (std::size_t f = 0; f < schema.fields.size(); ++f) {
        const std::uint64_t h = mix_seed(structure_seed ^ kTeacherSalt, static_cast<std::uint64_t>(f),
                                         static_cast<std::uint64_t>(x[f]));
        z += scale * (2.0 * to_unit(h) - 1.0) * 3.0;
    }
    return q_lo + (q_hi - q_lo) * sigmoid(z);
}

double LandscapeSpec::bid_log_mu(int scene_id, int bucket) const {
    const SceneConfig& sc = scene(scene_id);
    const std::uint64_t h = mix_seed(structure_seed ^ kBucketSalt, static_cast<std::uint64_t>(scene_id),
                                     static_cast<std::uint64_t>(bucket));
    return sc.bid_mu + sc.bid_mu_bucket_amp * (2.0 * to_unit(h) - 1.0);
}

double LandscapeSpec::upstream_mean(const FeatureVec& x) const {
    const SceneConfig& sc = scene(scene_of(x));
    return teacher_q(x) * sc.profile.ctr_factors[static_cast<std::size_t>(ref_slot - 1)] * upstream_bias;
}

FeatureVec LandscapeSpec::sample_features(Rng& rng) const {
    FeatureVec x(schema.fields.size());
    const int sf = scene_field();
    for (std::size_t f = 0; f < schema.fields.size(); ++f) {
        const int hi = (static_cast<int>(f) == sf) ? n_scenes() : schema.fields[f].vocab;
        x[f] = rng.uniform_int(hi);
    }
    return x;
}

double LandscapeSpec::sample_value(int scene_id, Rng& rng) const {
    const SceneConfig& sc = scene(scene_id);
    return rng.lognormal(sc.value_mu, sc.value_sigma);
}

void LandscapeSpec::sample_competitors(int scene_id, int bucket, Rng& rng,
                                       std::vector<Money>& out) const {
    const SceneConfig& sc = scene(scene_id);
    const double mu = bid_log_mu(scene_id, bucket);
    out.resize(static_cast<std::size_t>(sc.competitors));
    for (auto& b : out) b = std::max<Money>(1, to_money(rng.lognormal(mu, sc.bid_sigma)));
}

double LandscapeSpec::sample_upstream_pctr(const FeatureVec& x, Rng& rng) const {
    const double mean = upstream_mean(x);
    const double s = upstream_noise;
    const double v = mean * std::exp(s * rng.normal() - 0.5 * s * s);
    return std::clamp(v, 1e-6, 1.0 - 1e-6);
}

double LandscapeSpec::bid_cdf(int scene_id, int bucket, double bid) const {
    if (bid <= 0.0) return 0.0;
    const SceneConfig& sc = scene(scene_id);
    return normal_cdf((std::log(bid) - bid_log_mu(scene_id, bucket)) / sc.bid_sigma);
}

double LandscapeSpec::win_prob(int scene_id, int bucket, double bid) const {
    const SceneConfig& sc = scene(scene_id);
    const int m = sc.competitors, k = sc.profile.slots;
    const double p = bid_cdf(scene_id, bucket, bid);  // one competitor at or below b
    const std::vector<double> c = pascal_row(m);
    double total = 0.0;
    for (int j = 0; j < k; ++j)  // j competitors strictly above
        total += c[static_cast<std::size_t>(j)] * std::pow(1.0 - p, j) * std::pow(p, m - j);
    return std::min(total, 1.0);
}

double LandscapeSpec::slot_prob(int scene_id, int bucket, int slot, double bid) const {
    const SceneConfig& sc = scene(scene_id);
    const int m = sc.competitors, k = sc.profile.slots;
    if (slot < 1 || slot > k) throw ConfigError("slot_prob: slot outside 1..K");
    const double p = bid_cdf(scene_id, bucket, bid);
    const std::vector<double> c = pascal_row(m);
    return c[static_cast<std::size_t>(slot - 1)] * std::pow(1.0 - p, slot - 1) *
           std::pow(p, m - slot + 1);
}

double LandscapeSpec::expected_u_win(int scene_id, int bucket, double bid) const {
    const SceneConfig& sc = scene(scene_id);
    double total = 0.0;
    for (int j = 1; j <= sc.profile.slots; ++j)
        total += slot_prob(scene_id, bucket, j, bid) * sc.profile.ctr_factors[static_cast<std::size_t>(j - 1)];
    return total;
}

double LandscapeSpec::expected_u_given_win(int scene_id, int bucket, double bid) const {
    const SceneConfig& sc = scene(scene_id);
    const double pw = win_prob(scene_id, bucket, bid);
    if (pw < 1e-300) return sc.profile.ctr_factors.back();  // b -> 0 limit: last slot dominates
    return expected_u_win(scene_id, bucket, bid) / pw;
}

double LandscapeSpec::expected_cost_exact(int scene_id, int bucket, double bid) const {
    if (bid <= 0.0) return 0.0;
    const SceneConfig& sc = scene(scene_id);
    const int m = sc.competitors, k = sc.profile.slots;
    const double log_fb = std::log(std::max(bid_cdf(scene_id, bucket, bid), 1e-300));
    const GaussLegendre& gl = quad64();

    // I_r = ∫₀ᵇ (F(t)/F(b))^r dt for r = number of competitors below the focal
    // bid; E[max of r conditioned-below bids] = b − I_r.
    std::vector<double> integral(static_cast<std::size_t>(m) + 1, 0.0);
    for (std::size_t i = 0; i < gl.x.size(); ++i) {
        const double t = 0.5 * bid * (gl.x[i] + 1.0);
        const double wgt = 0.5 * bid * gl.w[i];
        const double lf = std::log(std::max(bid_cdf(scene_id, bucket, t), 1e-300)) - log_fb;
        for (int r = 1; r <= m; ++r) integral[static_cast<std::size_t>(r)] += wgt * std::exp(r * lf);
    }

    double total = 0.0;
    for (int j = 1; j <= k; ++j) {
        const int below = m - j + 1;
        total += slot_prob(scene_id, bucket, j, bid) * (bid - integral[static_cast<std::size_t>(below)]);
    }
    return total;
}

// ---------------------------------------------------------------- serialization

std::string LandscapeSpec::to_json() const {
    nlohmann::json j;
    j["structure_seed"] = structure_seed;
    nlohmann::json sch = nlohmann::json::array();
    for (const auto& f : schema.fields) sch.push_back({{"name", f.name}, {"vocab", f.vocab}});
    j["schema"] = sch;
    nlohmann::json scs = nlohmann::json::array();
    for (const auto& sc : scenes) {
        scs.push_back({{"scene_id", sc.profile.scene_id},
                       {"slots", sc.profile.slots},
                       {"u", sc.profile.ctr_factors},
                       {"competitors", sc.competitors},
                       {"bid_mu", sc.bid_mu},
                       {"bid_mu_bucket_amp", sc.bid_mu_bucket_amp},
                       {"bid_sigma", sc.bid_sigma},
                       {"value_mu", sc.value_mu},
                       {"value_sigma", sc.value_sigma}});
    }
    j["scenes"] = scs;
    j["q_lo"] = q_lo;
    j["q_hi"] = q_hi;
    j["teacher_amp"] = teacher_amp;
    j["upstream_bias"] = upstream_bias;
    j["upstream_noise"] = upstream_noise;
    j["ref_slot"] = ref_slot;
    j["mu0"] = mu0;
    return j.dump(2);
}

LandscapeSpec LandscapeSpec::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("landscape json: ") + e.what());
    }
    LandscapeSpec spec;
    try {
        spec.structure_seed = j.at("structure_seed").get<std::uint64_t>();
        spec.schema.fields.clear();
        for (const auto& f : j.at("schema"))
            spec.schema.fields.push_back({f.at("name").get<std::string>(), f.at("vocab").get<int>()});
        spec.scenes.clear();
        for (const auto& s : j.at("scenes")) {
            SceneConfig sc;
            sc.profile.scene_id = s.at("scene_id").get<int>();
            sc.profile.slots = s.at("slots").get<int>();
            sc.profile.ctr_factors = s.at("u").get<std::vector<double>>();
            sc.competitors = s.at("competitors").get<int>();
            sc.bid_mu = s.at("bid_mu").get<double>();
            sc.bid_mu_bucket_amp = s.at("bid_mu_bucket_amp").get<double>();
            sc.bid_sigma = s.at("bid_sigma").get<double>();
            sc.value_mu = s.at("value_mu").get<double>();
            sc.value_sigma = s.at("value_sigma").get<double>();
            spec.scenes.push_back(sc);
        }
        spec.q_lo = j.at("q_lo").get<double>();
        spec.q_hi = j.at("q_hi").get<double>();
        spec.teacher_amp = j.at("teacher_amp").get<double>();
        spec.upstream_bias = j.at("upstream_bias").get<double>();
        spec.upstream_noise = j.at("upstream_noise").get<double>();
        spec.ref_slot = j.at("ref_slot").get<int>();
        spec.mu0 = j.at("mu0").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("landscape json: ") + e.what());
    }
    spec.validate();
    return spec;
}

std::uint64_t LandscapeSpec::fingerprint() const { return fnv1a64(to_json()); }

LandscapeSpec LandscapeSpec::make_preset(const std::string& name) {
    LandscapeSpec spec;
    spec.structure_seed = 17;
    spec.schema = FeatureSchema::defaults();
    auto scene = [](int id, int k, std::vector<double> u, int m, double bmu, double bamp,
                    double bsig, double vmu, double vsig) {
        SceneConfig sc;
        sc.profile = {id, k, std::move(u)};
        sc.competitors = m;
        sc.bid_mu = bmu;
        sc.bid_mu_bucket_amp = bamp;
        sc.bid_sigma = bsig;
        sc.value_mu = vmu;
        sc.value_sigma = vsig;
        return sc;
    };
    if (name == "trainable") {
        spec.scenes = {
            scene(0, 3, {0.70, 0.45, 0.28}, 8, 1.609, 0.25, 0.45, 0.90, 0.50),
            scene(1, 2, {0.80, 0.50}, 6, 1.386, 0.25, 0.50, 0.70, 0.50),
            scene(2, 4, {0.60, 0.40, 0.26, 0.16}, 12, 1.792, 0.25, 0.55, 1.10, 0.50),
        };
        spec.q_lo = 0.01;
        spec.q_hi = 0.50;
        spec.teacher_amp = 1.2;
    } else if (name == "paper-sparsity") {
        spec.scenes = {
            scene(0, 3, {0.70, 0.45, 0.28}, 8, 1.609, 0.25, 0.45, 0.53, 0.50),
            scene(1, 2, {0.80, 0.50}, 6, 1.386, 0.25, 0.50, 0.33, 0.50),
            scene(2, 4, {0.60, 0.40, 0.26, 0.16}, 12, 1.792, 0.25, 0.55, 0.73, 0.50),
        };
        spec.q_lo = 0.002;
        spec.q_hi = 0.088;
        spec.teacher_amp = 1.2;
    } else {
        throw ConfigError("unknown landscape preset '" + name + "'");
    }
    spec.upstream_bias = 1.10;
    spec.upstream_noise = 0.25;
    spec.ref_slot = 1;
    spec.mu0 = 1.0;
    spec.validate();
    return spec;
}

}  // namespace bidshade
