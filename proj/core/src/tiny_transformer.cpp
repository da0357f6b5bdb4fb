#include "debiaslab/tiny_transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "debiaslab/error.hpp"

namespace debiaslab {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.08;

// Box-Muller over explicit 53-bit uniforms; keeps initialization bitwise
// reproducible across standard libraries.
class SeededNormal {
  public:
    explicit SeededNormal(uint64_t seed) : rng_(seed) {}

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

  private:
    double uniform01() {
        // in (0, 1]
        uint64_t bits = rng_() >> 11;
        return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
    }

    std::mt19937_64 rng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

struct ParamBlock {
    std::string name;
    size_t offset;
    int rows;
    int cols;
};

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

void TinyTransformerConfig::validate() const {
    if (num_layers < 1 || hidden_dim < 1 || num_heads < 1 || vocab_size < 2 || max_seq_len < 2) {
        throw Error(ErrorCode::invalid_input, "tiny transformer dimensions must be positive");
    }
    if (hidden_dim % num_heads != 0) {
        throw Error(ErrorCode::invalid_input, "hidden_dim must be divisible by num_heads");
    }
}

uint64_t TinyTransformerConfig::fingerprint() const {
    int fields[5] = {num_layers, hidden_dim, num_heads, vocab_size, max_seq_len};
    uint64_t h = fnv1a64(fields, sizeof(fields));
    h = fnv1a64(&seed, sizeof(seed), h);
    int init = static_cast<int>(init_scheme);
    return fnv1a64(&init, sizeof(init), h);
}

TinyTransformerConfig TinyTransformerConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::io_error, "cannot open tiny transformer config: " + path);
    }
    TinyTransformerConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::format_error,
                        path + ":" + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        try {
            if (key == "num_layers") cfg.num_layers = std::stoi(value);
            else if (key == "hidden_dim") cfg.hidden_dim = std::stoi(value);
            else if (key == "num_heads") cfg.num_heads = std::stoi(value);
            else if (key == "vocab_size") cfg.vocab_size = std::stoi(value);
            else if (key == "max_seq_len") cfg.max_seq_len = std::stoi(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "init_scheme") {
                if (value == "random") cfg.init_scheme = InitScheme::random;
                else if (value == "uniform-output") cfg.init_scheme = InitScheme::uniform_output;
                else
                    throw Error(ErrorCode::format_error,
                                "init_scheme must be 'random' or 'uniform-output'");
            } else {
                throw Error(ErrorCode::format_error, "unknown key '" + key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw Error(ErrorCode::format_error,
                        path + ":" + std::to_string(lineno) + ": bad value for " + key);
        }
    }
    cfg.validate();
    return cfg;
}

void TinyTransformerConfig::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorCode::io_error, "cannot write tiny transformer config: " + path);
    }
    out << "num_layers = " << num_layers << "\n"
        << "hidden_dim = " << hidden_dim << "\n"
        << "num_heads = " << num_heads << "\n"
        << "vocab_size = " << vocab_size << "\n"
        << "max_seq_len = " << max_seq_len << "\n"
        << "seed = " << seed << "\n"
        << "init_scheme = " << (init_scheme == InitScheme::random ? "random" : "uniform-output")
        << "\n";
}

// ---------------------------------------------------------------------------

struct TinyTransformer::Impl {
    TinyTransformerConfig cfg;
    std::vector<double> params;
    std::vector<ParamBlock> blocks;
    std::map<std::string, size_t> block_index;

    int dim() const { return cfg.hidden_dim; }
    int mlp_dim() const { return 4 * cfg.hidden_dim; }
    int head_dim() const { return cfg.hidden_dim / cfg.num_heads; }

    size_t add_block(const std::string& name, int rows, int cols, size_t offset) {
        block_index[name] = blocks.size();
        blocks.push_back(ParamBlock{name, offset, rows, cols});
        return offset + static_cast<size_t>(rows) * cols;
    }

    void layout() {
        size_t off = 0;
        off = add_block("wtok", dim(), cfg.vocab_size, off);
        off = add_block("wpos", dim(), cfg.max_seq_len, off);
        for (int l = 0; l < cfg.num_layers; ++l) {
            std::string p = "layer" + std::to_string(l) + ".";
            off = add_block(p + "ln1_g", dim(), 1, off);
            off = add_block(p + "ln1_b", dim(), 1, off);
            off = add_block(p + "wqkv", 3 * dim(), dim(), off);
            off = add_block(p + "bqkv", 3 * dim(), 1, off);
            off = add_block(p + "wo", dim(), dim(), off);
            off = add_block(p + "bo", dim(), 1, off);
            off = add_block(p + "ln2_g", dim(), 1, off);
            off = add_block(p + "ln2_b", dim(), 1, off);
            off = add_block(p + "wup", mlp_dim(), dim(), off);
            off = add_block(p + "bup", mlp_dim(), 1, off);
            off = add_block(p + "wdown", dim(), mlp_dim(), off);
            off = add_block(p + "bdown", dim(), 1, off);
        }
        off = add_block("lnf_g", dim(), 1, off);
        off = add_block("lnf_b", dim(), 1, off);
        off = add_block("whead", cfg.vocab_size, dim(), off);
        off = add_block("bhead", cfg.vocab_size, 1, off);
        params.assign(off, 0.0);
    }

    const ParamBlock& block(const std::string& name) const {
        auto it = block_index.find(name);
        if (it == block_index.end()) {
            throw Error(ErrorCode::invalid_site, "unknown parameter block '" + name + "'");
        }
        return blocks[it->second];
    }

    Eigen::Map<Eigen::MatrixXd> view(const std::string& name) {
        const ParamBlock& b = block(name);
        return Eigen::Map<Eigen::MatrixXd>(params.data() + b.offset, b.rows, b.cols);
    }
    Eigen::Map<const Eigen::MatrixXd> view(const std::string& name) const {
        const ParamBlock& b = block(name);
        return Eigen::Map<const Eigen::MatrixXd>(params.data() + b.offset, b.rows, b.cols);
    }

    void init_weights() {
        SeededNormal gen(cfg.seed);
        // Deterministic order: iterate blocks in layout order.
        for (const ParamBlock& b : blocks) {
            Eigen::Map<Eigen::MatrixXd> m(params.data() + b.offset, b.rows, b.cols);
            size_t dot = b.name.rfind('.');
            std::string leaf = dot == std::string::npos ? b.name : b.name.substr(dot + 1);
            if (leaf.size() >= 2 && leaf.substr(leaf.size() - 2) == "_g") {
                m.setOnes(); // layer norm gain
            } else if (leaf[0] == 'b' || (leaf.size() >= 2 && leaf.substr(leaf.size() - 2) == "_b")) {
                m.setZero();
            } else {
                for (int c = 0; c < b.cols; ++c) {
                    for (int r = 0; r < b.rows; ++r) {
                        m(r, c) = kInitStd * gen.next();
                    }
                }
            }
        }
        if (cfg.init_scheme == InitScheme::uniform_output) {
            view("whead").setZero();
            view("bhead").setZero();
        }
    }

    void validate_site(const Site& site) const {
        if (site.name != "mlp_down" || site.layer < 0 || site.layer >= cfg.num_layers) {
            throw Error(ErrorCode::invalid_site, "not an editable site: " + site_to_string(site));
        }
    }

    std::string site_param(const Site& site) const {
        return "layer" + std::to_string(site.layer) + ".wdown";
    }

    // ---- forward machinery ----

    struct LnCache {
        Eigen::MatrixXd xhat; // dim x T
        Eigen::VectorXd rstd; // T
    };

    struct LayerCache {
        LnCache ln1, ln2;
        Eigen::MatrixXd q, k, v; // dim x T
        std::vector<Eigen::MatrixXd> probs; // per head, T x T row-stochastic
        Eigen::MatrixXd attn_concat; // dim x T
        Eigen::MatrixXd hpre, h; // mlp_dim x T
        Eigen::MatrixXd mlpout; // dim x T
        bool value_overridden = false;
        int override_pos = -1;
    };

    struct Trace {
        std::vector<int> seq; // BOS followed by token ids
        Eigen::MatrixXd x0;
        std::vector<LayerCache> layers;
        std::vector<Eigen::MatrixXd> residual_in; // x entering each layer
        Eigen::MatrixXd x_top;
        LnCache lnf;
        Eigen::MatrixXd logits; // vocab x T
    };

    struct ForwardOptions {
        const EmbeddingNoise* noise = nullptr;
        int override_layer = -1;
        int override_seq_pos = -1;
        const Eigen::VectorXd* override_value = nullptr;
    };

    Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& g,
                               const Eigen::VectorXd& b, LnCache& cache) const {
        const int d = static_cast<int>(x.rows());
        const int T = static_cast<int>(x.cols());
        cache.xhat.resize(d, T);
        cache.rstd.resize(T);
        Eigen::MatrixXd out(d, T);
        for (int t = 0; t < T; ++t) {
            double mu = x.col(t).mean();
            Eigen::VectorXd centered = x.col(t).array() - mu;
            double var = centered.squaredNorm() / d;
            double rstd = 1.0 / std::sqrt(var + kLnEps);
            cache.rstd(t) = rstd;
            cache.xhat.col(t) = centered * rstd;
            out.col(t) = (cache.xhat.col(t).array() * g.array()).matrix() + b;
        }
        return out;
    }

    // dy -> dx for the cached layer norm.
    Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::VectorXd& g,
                                        const LnCache& cache) const {
        const int d = static_cast<int>(dy.rows());
        const int T = static_cast<int>(dy.cols());
        Eigen::MatrixXd dx(d, T);
        for (int t = 0; t < T; ++t) {
            Eigen::VectorXd dxhat = dy.col(t).array() * g.array();
            double m1 = dxhat.mean();
            double m2 = (dxhat.array() * cache.xhat.col(t).array()).mean();
            dx.col(t) =
                cache.rstd(t) * (dxhat.array() - m1 - cache.xhat.col(t).array() * m2).matrix();
        }
        return dx;
    }

    std::vector<int> build_sequence(const std::vector<int>& context_ids,
                                    const std::vector<int>& text_ids) const {
        std::vector<int> seq;
        seq.reserve(1 + context_ids.size() + text_ids.size());
        seq.push_back(cfg.vocab_size - 1); // BOS
        seq.insert(seq.end(), context_ids.begin(), context_ids.end());
        seq.insert(seq.end(), text_ids.begin(), text_ids.end());
        if (static_cast<int>(seq.size()) > cfg.max_seq_len) {
            throw Error(ErrorCode::invalid_input,
                        "sequence of " + std::to_string(seq.size()) +
                            " tokens exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
        }
        return seq;
    }

    Trace forward(const std::vector<int>& seq, const ForwardOptions& opts) const {
        const int d = dim();
        const int T = static_cast<int>(seq.size());
        const int H = cfg.num_heads;
        const int dh = head_dim();
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

        Trace tr;
        tr.seq = seq;
        auto wtok = view("wtok");
        auto wpos = view("wpos");
        tr.x0.resize(d, T);
        for (int t = 0; t < T; ++t) {
            tr.x0.col(t) = wtok.col(seq[t]) + wpos.col(t);
        }
        if (opts.noise != nullptr) {
            for (size_t i = 0; i < opts.noise->text_positions.size(); ++i) {
                int seq_pos = opts.noise->text_positions[i] + 1; // skip BOS
                if (seq_pos < 0 || seq_pos >= T) {
                    throw Error(ErrorCode::invalid_input, "noise position out of range");
                }
                tr.x0.col(seq_pos) += opts.noise->noise.col(static_cast<Eigen::Index>(i));
            }
        }

        Eigen::MatrixXd x = tr.x0;
        tr.layers.resize(cfg.num_layers);
        tr.residual_in.resize(cfg.num_layers);
        for (int l = 0; l < cfg.num_layers; ++l) {
            LayerCache& lc = tr.layers[l];
            tr.residual_in[l] = x;
            std::string p = "layer" + std::to_string(l) + ".";
            Eigen::VectorXd ln1_g = view(p + "ln1_g").col(0);
            Eigen::VectorXd ln1_b = view(p + "ln1_b").col(0);
            Eigen::MatrixXd a = layer_norm(x, ln1_g, ln1_b, lc.ln1);

            Eigen::MatrixXd qkv = view(p + "wqkv") * a;
            qkv.colwise() += view(p + "bqkv").col(0);
            lc.q = qkv.topRows(d);
            lc.k = qkv.middleRows(d, d);
            lc.v = qkv.bottomRows(d);

            lc.attn_concat.resize(d, T);
            lc.probs.assign(H, Eigen::MatrixXd());
            for (int h = 0; h < H; ++h) {
                auto qh = lc.q.middleRows(h * dh, dh);
                auto kh = lc.k.middleRows(h * dh, dh);
                auto vh = lc.v.middleRows(h * dh, dh);
                Eigen::MatrixXd scores = (qh.transpose() * kh) * inv_sqrt_dh; // T x T
                Eigen::MatrixXd& probs = lc.probs[h];
                probs.setZero(T, T);
                for (int i = 0; i < T; ++i) {
                    double mx = -std::numeric_limits<double>::infinity();
                    for (int j = 0; j <= i; ++j) mx = std::max(mx, scores(i, j));
                    double denom = 0.0;
                    for (int j = 0; j <= i; ++j) {
                        probs(i, j) = std::exp(scores(i, j) - mx);
                        denom += probs(i, j);
                    }
                    for (int j = 0; j <= i; ++j) probs(i, j) /= denom;
                }
                lc.attn_concat.middleRows(h * dh, dh) = vh * probs.transpose();
            }
            Eigen::MatrixXd attn_out = view(p + "wo") * lc.attn_concat;
            attn_out.colwise() += view(p + "bo").col(0);
            x += attn_out;

            Eigen::VectorXd ln2_g = view(p + "ln2_g").col(0);
            Eigen::VectorXd ln2_b = view(p + "ln2_b").col(0);
            Eigen::MatrixXd m = layer_norm(x, ln2_g, ln2_b, lc.ln2);
            lc.hpre = view(p + "wup") * m;
            lc.hpre.colwise() += view(p + "bup").col(0);
            lc.h = lc.hpre.unaryExpr([](double v) { return gelu(v); });
            lc.mlpout = view(p + "wdown") * lc.h;
            lc.mlpout.colwise() += view(p + "bdown").col(0);
            if (opts.override_layer == l && opts.override_value != nullptr) {
                if (opts.override_seq_pos < 0 || opts.override_seq_pos >= T) {
                    throw Error(ErrorCode::invalid_input, "override position out of range");
                }
                lc.mlpout.col(opts.override_seq_pos) = *opts.override_value;
                lc.value_overridden = true;
                lc.override_pos = opts.override_seq_pos;
            }
            x += lc.mlpout;
        }
        tr.x_top = x;
        Eigen::VectorXd lnf_g = view("lnf_g").col(0);
        Eigen::VectorXd lnf_b = view("lnf_b").col(0);
        Eigen::MatrixXd f = layer_norm(x, lnf_g, lnf_b, tr.lnf);
        tr.logits = view("whead") * f;
        tr.logits.colwise() += view("bhead").col(0);
        return tr;
    }

    // Backpropagates dlogits to the requested gradients. When
    // `grad_site_layer` >= 0, accumulates dW for that layer's down
    // projection. When `grad_value` is set, returns the gradient arriving at
    // the overridden MLP output column.
    struct BackwardOut {
        Eigen::MatrixXd dwdown;
        Eigen::VectorXd dvalue;
    };

    BackwardOut backward(const Trace& tr, const Eigen::MatrixXd& dlogits, int grad_site_layer,
                         bool grad_value) const {
        const int d = dim();
        const int T = static_cast<int>(tr.seq.size());
        const int H = cfg.num_heads;
        const int dh = head_dim();
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

        BackwardOut out;
        if (grad_site_layer >= 0) out.dwdown.setZero(d, mlp_dim());
        if (grad_value) out.dvalue.setZero(d);

        Eigen::MatrixXd df = view("whead").transpose() * dlogits;
        Eigen::MatrixXd dx = layer_norm_backward(df, view("lnf_g").col(0), tr.lnf);

        for (int l = cfg.num_layers - 1; l >= 0; --l) {
            const LayerCache& lc = tr.layers[l];
            std::string p = "layer" + std::to_string(l) + ".";

            // MLP block: x_out = x_mid + mlpout
            Eigen::MatrixXd dmlpout = dx; // dx also continues to x_mid below
            if (lc.value_overridden) {
                if (grad_value) out.dvalue = dmlpout.col(lc.override_pos);
                dmlpout.col(lc.override_pos).setZero(); // override cut the h dependence
            }
            if (l == grad_site_layer) {
                out.dwdown.noalias() += dmlpout * lc.h.transpose();
            }
            Eigen::MatrixXd dh_act = view(p + "wdown").transpose() * dmlpout;
            Eigen::MatrixXd dhpre =
                dh_act.array() * lc.hpre.unaryExpr([](double v) { return gelu_grad(v); }).array();
            Eigen::MatrixXd dm = view(p + "wup").transpose() * dhpre;
            dx += layer_norm_backward(dm, view(p + "ln2_g").col(0), lc.ln2);

            // attention block: x_mid = x_in + Wo * concat + bo
            Eigen::MatrixXd dconcat = view(p + "wo").transpose() * dx;
            Eigen::MatrixXd dqkv(3 * d, T);
            for (int h = 0; h < H; ++h) {
                auto vh = lc.v.middleRows(h * dh, dh);
                auto qh = lc.q.middleRows(h * dh, dh);
                auto kh = lc.k.middleRows(h * dh, dh);
                const Eigen::MatrixXd& probs = lc.probs[h];
                Eigen::MatrixXd doh = dconcat.middleRows(h * dh, dh);
                Eigen::MatrixXd dprobs = doh.transpose() * vh; // T x T
                Eigen::MatrixXd dvh = doh * probs;
                Eigen::MatrixXd dscores(T, T);
                dscores.setZero();
                for (int i = 0; i < T; ++i) {
                    double dot = 0.0;
                    for (int j = 0; j <= i; ++j) dot += dprobs(i, j) * probs(i, j);
                    for (int j = 0; j <= i; ++j) {
                        dscores(i, j) = (dprobs(i, j) - dot) * probs(i, j);
                    }
                }
                dqkv.middleRows(h * dh, dh) = kh * dscores.transpose() * inv_sqrt_dh;
                dqkv.middleRows(d + h * dh, dh) = qh * dscores * inv_sqrt_dh;
                dqkv.middleRows(2 * d + h * dh, dh) = dvh;
            }
            Eigen::MatrixXd da = view(p + "wqkv").transpose() * dqkv;
            dx += layer_norm_backward(da, view(p + "ln1_g").col(0), lc.ln1);
        }
        return out;
    }

    // ---- scoring helpers ----

    static double log_softmax_at(const Eigen::VectorXd& logits, int index) {
        double mx = logits.maxCoeff();
        double lse = std::log((logits.array() - mx).exp().sum()) + mx;
        return logits(index) - lse;
    }

    static Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
        double mx = logits.maxCoeff();
        Eigen::VectorXd e = (logits.array() - mx).exp();
        return e / e.sum();
    }

    double score_text(const std::vector<int>& context_ids, const std::vector<int>& text_ids) const {
        std::vector<int> seq = build_sequence(context_ids, text_ids);
        Trace tr = forward(seq, {});
        double total = 0.0;
        size_t first = 1 + context_ids.size();
        for (size_t pos = first; pos < seq.size(); ++pos) {
            total += log_softmax_at(tr.logits.col(static_cast<Eigen::Index>(pos - 1)), seq[pos]);
        }
        return total;
    }

    int argmax_next(const std::vector<int>& context_ids, const std::vector<int>& prompt_ids) const {
        std::vector<int> seq = build_sequence(context_ids, prompt_ids);
        Trace tr = forward(seq, {});
        Eigen::VectorXd logits = tr.logits.col(static_cast<Eigen::Index>(seq.size() - 1));
        int best = 0;
        for (int i = 1; i < logits.size(); ++i) {
            if (logits(i) > logits(best)) best = i;
        }
        return best;
    }

    // Positions of masked target tokens, expressed as (logit column, token id).
    struct MaskedTarget {
        std::vector<int> seq;
        std::vector<std::pair<int, int>> scored; // (column, token id)
    };

    MaskedTarget masked_target(const ByteTokenizer& tok, const std::string& prompt,
                               const std::string& target,
                               const std::vector<bool>* loss_mask) const {
        std::vector<int> prompt_ids = tok.encode(prompt);
        std::vector<int> target_ids = tok.encode(target);
        if (target_ids.empty()) {
            throw Error(ErrorCode::invalid_input, "edit target tokenizes to zero tokens");
        }
        if (loss_mask != nullptr && loss_mask->size() != target_ids.size()) {
            throw Error(ErrorCode::invalid_input, "loss mask length does not match target tokens");
        }
        MaskedTarget mt;
        mt.seq = build_sequence({}, [&] {
            std::vector<int> all = prompt_ids;
            all.insert(all.end(), target_ids.begin(), target_ids.end());
            return all;
        }());
        for (size_t t = 0; t < target_ids.size(); ++t) {
            if (loss_mask == nullptr || (*loss_mask)[t]) {
                int seq_pos = static_cast<int>(1 + prompt_ids.size() + t);
                mt.scored.emplace_back(seq_pos - 1, target_ids[t]);
            }
        }
        if (mt.scored.empty()) {
            throw Error(ErrorCode::invalid_input, "loss mask selects no target tokens");
        }
        return mt;
    }
};

// ---------------------------------------------------------------------------

TinyTransformer::TinyTransformer(const TinyTransformerConfig& config)
    : config_(config), tokenizer_(config.vocab_size), impl_(std::make_unique<Impl>()) {
    config_.validate();
    std::ostringstream id;
    id << "tiny-l" << config_.num_layers << "-d" << config_.hidden_dim << "-h" << config_.num_heads
       << "-v" << config_.vocab_size << "-s" << config_.seed
       << (config_.init_scheme == InitScheme::uniform_output ? "-uniform" : "");
    model_id_ = id.str();
    impl_->cfg = config_;
    impl_->layout();
    impl_->init_weights();
}

TinyTransformer::~TinyTransformer() = default;

std::vector<Site> TinyTransformer::editable_sites() const {
    std::vector<Site> sites;
    sites.reserve(config_.num_layers);
    for (int l = 0; l < config_.num_layers; ++l) {
        sites.push_back(Site{l, "mlp_down"});
    }
    return sites;
}

double TinyTransformer::sequence_logprob(const std::string& text) const {
    std::vector<int> ids = tokenizer_.encode(text);
    if (ids.empty()) {
        throw Error(ErrorCode::invalid_input, "cannot score empty text");
    }
    return impl_->score_text({}, ids);
}

double TinyTransformer::sequence_logprob_given(const std::string& context,
                                               const std::string& text) const {
    std::vector<int> text_ids = tokenizer_.encode(text);
    if (text_ids.empty()) {
        throw Error(ErrorCode::invalid_input, "cannot score empty text");
    }
    return impl_->score_text(tokenizer_.encode(context), text_ids);
}

int TinyTransformer::next_token_argmax(const std::string& prompt) const {
    std::vector<int> ids = tokenizer_.encode(prompt);
    if (ids.empty()) {
        throw Error(ErrorCode::invalid_input, "cannot predict from empty prompt");
    }
    return impl_->argmax_next({}, ids);
}

int TinyTransformer::next_token_argmax_given(const std::string& context,
                                             const std::string& prompt) const {
    std::vector<int> ids = tokenizer_.encode(prompt);
    if (ids.empty()) {
        throw Error(ErrorCode::invalid_input, "cannot predict from empty prompt");
    }
    return impl_->argmax_next(tokenizer_.encode(context), ids);
}

Eigen::VectorXd TinyTransformer::next_token_distribution(const std::string& prompt) const {
    std::vector<int> ids = tokenizer_.encode(prompt);
    if (ids.empty()) {
        throw Error(ErrorCode::invalid_input, "cannot predict from empty prompt");
    }
    std::vector<int> seq = impl_->build_sequence({}, ids);
    Impl::Trace tr = impl_->forward(seq, {});
    return Impl::softmax(tr.logits.col(static_cast<Eigen::Index>(seq.size() - 1)));
}

std::vector<double> TinyTransformer::per_token_probs(const std::string& text,
                                                     const EmbeddingNoise* noise) const {
    std::vector<int> ids = tokenizer_.encode(text);
    if (ids.empty()) {
        throw Error(ErrorCode::invalid_input, "cannot score empty text");
    }
    std::vector<int> seq = impl_->build_sequence({}, ids);
    Impl::ForwardOptions opts;
    opts.noise = noise;
    Impl::Trace tr = impl_->forward(seq, opts);
    std::vector<double> probs(ids.size());
    for (size_t pos = 1; pos < seq.size(); ++pos) {
        probs[pos - 1] =
            std::exp(Impl::log_softmax_at(tr.logits.col(static_cast<Eigen::Index>(pos - 1)),
                                          seq[pos]));
    }
    return probs;
}

Eigen::MatrixXd TinyTransformer::site_weights(const Site& site) const {
    impl_->validate_site(site);
    return impl_->view(impl_->site_param(site));
}

void TinyTransformer::apply_weight_delta(const Site& site, const Eigen::MatrixXd& delta) {
    impl_->validate_site(site);
    auto w = impl_->view(impl_->site_param(site));
    if (delta.rows() != w.rows() || delta.cols() != w.cols()) {
        throw Error(ErrorCode::invalid_site,
                    "delta shape " + std::to_string(delta.rows()) + "x" +
                        std::to_string(delta.cols()) + " does not match site " +
                        site_to_string(site));
    }
    w += delta;
}

void TinyTransformer::overwrite_site_weights(const Site& site, const Eigen::MatrixXd& weights) {
    impl_->validate_site(site);
    auto w = impl_->view(impl_->site_param(site));
    if (weights.rows() != w.rows() || weights.cols() != w.cols()) {
        throw Error(ErrorCode::invalid_site, "weight shape does not match site");
    }
    w = weights;
}

Eigen::VectorXd TinyTransformer::collect_mlp_key(int layer, const std::string& text,
                                                 int position) const {
    if (layer < 0 || layer >= config_.num_layers) {
        throw Error(ErrorCode::invalid_input, "layer out of range");
    }
    std::vector<int> ids = tokenizer_.encode(text);
    if (position < 0 || position >= static_cast<int>(ids.size())) {
        throw Error(ErrorCode::invalid_input, "position out of range");
    }
    std::vector<int> seq = impl_->build_sequence({}, ids);
    Impl::Trace tr = impl_->forward(seq, {});
    return tr.layers[layer].h.col(position + 1);
}

Eigen::VectorXd TinyTransformer::collect_mlp_value(int layer, const std::string& text,
                                                   int position) const {
    if (layer < 0 || layer >= config_.num_layers) {
        throw Error(ErrorCode::invalid_input, "layer out of range");
    }
    std::vector<int> ids = tokenizer_.encode(text);
    if (position < 0 || position >= static_cast<int>(ids.size())) {
        throw Error(ErrorCode::invalid_input, "position out of range");
    }
    std::vector<int> seq = impl_->build_sequence({}, ids);
    Impl::Trace tr = impl_->forward(seq, {});
    return tr.layers[layer].mlpout.col(position + 1);
}

double TinyTransformer::embedding_component_variance(const std::vector<std::string>& texts) const {
    if (texts.empty()) {
        throw Error(ErrorCode::invalid_input, "empty sample for embedding variance");
    }
    auto wtok = impl_->view("wtok");
    double sum = 0.0, sumsq = 0.0;
    size_t n = 0;
    for (const std::string& text : texts) {
        for (int id : tokenizer_.encode(text)) {
            for (int r = 0; r < wtok.rows(); ++r) {
                double v = wtok(r, id);
                sum += v;
                sumsq += v * v;
                ++n;
            }
        }
    }
    if (n == 0) {
        throw Error(ErrorCode::invalid_input, "embedding variance sample has no tokens");
    }
    double mean = sum / static_cast<double>(n);
    return sumsq / static_cast<double>(n) - mean * mean;
}

double TinyTransformer::masked_nll_and_site_grad(const Site& site, const std::string& prompt,
                                                 const std::string& target,
                                                 const std::vector<bool>* loss_mask,
                                                 Eigen::MatrixXd* grad) const {
    impl_->validate_site(site);
    Impl::MaskedTarget mt = impl_->masked_target(tokenizer_, prompt, target, loss_mask);
    Impl::Trace tr = impl_->forward(mt.seq, {});
    double nll = 0.0;
    const double w = 1.0 / static_cast<double>(mt.scored.size());
    Eigen::MatrixXd dlogits;
    if (grad != nullptr) dlogits.setZero(config_.vocab_size, static_cast<int>(mt.seq.size()));
    for (auto [col, token] : mt.scored) {
        Eigen::VectorXd logits = tr.logits.col(col);
        nll -= Impl::log_softmax_at(logits, token);
        if (grad != nullptr) {
            Eigen::VectorXd p = Impl::softmax(logits);
            p(token) -= 1.0;
            dlogits.col(col) += w * p;
        }
    }
    nll *= w;
    if (grad != nullptr) {
        Impl::BackwardOut bo = impl_->backward(tr, dlogits, site.layer, false);
        *grad = bo.dwdown;
    }
    return nll;
}

ModelHandle::ValueLoss TinyTransformer::value_substitution_loss(
    int layer, int subject_last_token, const Eigen::VectorXd& value, const std::string& prompt,
    const std::string& target, const std::vector<bool>* loss_mask,
    const Eigen::VectorXd& ref_probs, double kl_weight, Eigen::VectorXd* grad) const {
    if (layer < 0 || layer >= config_.num_layers) {
        throw Error(ErrorCode::invalid_input, "layer out of range");
    }
    Impl::MaskedTarget mt = impl_->masked_target(tokenizer_, prompt, target, loss_mask);
    const int subj_seq_pos = subject_last_token + 1;
    if (subj_seq_pos < 1 || subj_seq_pos >= static_cast<int>(mt.seq.size())) {
        throw Error(ErrorCode::invalid_input, "subject position out of range");
    }
    Impl::ForwardOptions opts;
    opts.override_layer = layer;
    opts.override_seq_pos = subj_seq_pos;
    opts.override_value = &value;
    Impl::Trace tr = impl_->forward(mt.seq, opts);

    ValueLoss loss;
    const double w = 1.0 / static_cast<double>(mt.scored.size());
    Eigen::MatrixXd dlogits;
    if (grad != nullptr) dlogits.setZero(config_.vocab_size, static_cast<int>(mt.seq.size()));
    for (auto [col, token] : mt.scored) {
        Eigen::VectorXd logits = tr.logits.col(col);
        loss.nll -= Impl::log_softmax_at(logits, token);
        if (grad != nullptr) {
            Eigen::VectorXd p = Impl::softmax(logits);
            p(token) -= 1.0;
            dlogits.col(col) += w * p;
        }
    }
    loss.nll *= w;

    if (kl_weight > 0.0) {
        Eigen::VectorXd p = Impl::softmax(tr.logits.col(subj_seq_pos));
        double kl = 0.0;
        for (int i = 0; i < p.size(); ++i) {
            if (ref_probs(i) > 0.0) {
                kl += ref_probs(i) * (std::log(ref_probs(i)) - std::log(std::max(p(i), 1e-300)));
            }
        }
        loss.kl = kl;
        if (grad != nullptr) {
            dlogits.col(subj_seq_pos) += kl_weight * (p - ref_probs);
        }
    }
    loss.total = loss.nll + kl_weight * loss.kl;
    if (grad != nullptr) {
        Impl::BackwardOut bo = impl_->backward(tr, dlogits, -1, true);
        *grad = bo.dvalue;
    }
    return loss;
}

Eigen::VectorXd TinyTransformer::token_distribution_at(const std::string& text,
                                                       int position) const {
    std::vector<int> ids = tokenizer_.encode(text);
    if (position < 0 || position >= static_cast<int>(ids.size())) {
        throw Error(ErrorCode::invalid_input, "position out of range");
    }
    std::vector<int> seq = impl_->build_sequence({}, ids);
    Impl::Trace tr = impl_->forward(seq, {});
    return Impl::softmax(tr.logits.col(position + 1));
}

ModelSnapshot TinyTransformer::capture_snapshot() const {
    static uint64_t counter = 0;
    ModelSnapshot snap;
    snap.snapshot_id = model_id_ + "-snap" + std::to_string(counter++);
    snap.arch_fingerprint = config_.fingerprint();
    snap.parameters = impl_->params;
    snap.memory_entries = memory_.entries();
    return snap;
}

void TinyTransformer::restore_snapshot(const ModelSnapshot& snapshot) {
    if (snapshot.arch_fingerprint != config_.fingerprint() ||
        snapshot.parameters.size() != impl_->params.size()) {
        throw Error(ErrorCode::incompatible_snapshot,
                    "snapshot " + snapshot.snapshot_id + " does not match model architecture");
    }
    impl_->params = snapshot.parameters;
    memory_.clear();
    for (const MemoryEntry& e : snapshot.memory_entries) {
        memory_.upsert(e);
    }
}

Eigen::MatrixXd TinyTransformer::named_param(const std::string& name) const {
    return impl_->view(name);
}

std::vector<std::string> TinyTransformer::param_names() const {
    std::vector<std::string> names;
    names.reserve(impl_->blocks.size());
    for (const ParamBlock& b : impl_->blocks) names.push_back(b.name);
    return names;
}

const std::vector<double>& TinyTransformer::raw_parameters() const { return impl_->params; }

// ---------------------------------------------------------------------------

std::string site_to_string(const Site& site) {
    return "layer" + std::to_string(site.layer) + "/" + site.name;
}

void EditMemory::upsert(MemoryEntry entry) {
    for (MemoryEntry& e : entries_) {
        if (e.case_id == entry.case_id) {
            e = std::move(entry);
            return;
        }
    }
    entries_.push_back(std::move(entry));
}

std::optional<std::pair<size_t, double>> EditMemory::best_match(
    const Eigen::VectorXd& query) const {
    if (entries_.empty()) return std::nullopt;
    size_t best = 0;
    double best_sim = -2.0;
    for (size_t i = 0; i < entries_.size(); ++i) {
        double sim = entries_[i].embedding.dot(query);
        if (sim > best_sim) {
            best_sim = sim;
            best = i;
        }
    }
    return std::make_pair(best, best_sim);
}

namespace {
constexpr uint32_t kSnapshotMagic = 0x44424c53; // "DBLS"
}

void ModelSnapshot::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::io_error, "cannot write snapshot: " + path);
    }
    auto write_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto write_u64 = [&](uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    auto write_str = [&](const std::string& s) {
        write_u64(s.size());
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    };
    write_u32(kSnapshotMagic);
    write_u32(1); // version
    write_str(snapshot_id);
    write_u64(arch_fingerprint);
    write_u64(parameters.size());
    out.write(reinterpret_cast<const char*>(parameters.data()),
              static_cast<std::streamsize>(parameters.size() * sizeof(double)));
    write_u64(memory_entries.size());
    for (const MemoryEntry& e : memory_entries) {
        write_str(e.case_id);
        write_str(e.prompt);
        write_str(e.sentence);
        write_u64(static_cast<uint64_t>(e.embedding.size()));
        out.write(reinterpret_cast<const char*>(e.embedding.data()),
                  static_cast<std::streamsize>(e.embedding.size() * sizeof(double)));
    }
    if (!out) {
        throw Error(ErrorCode::io_error, "failed writing snapshot: " + path);
    }
}

ModelSnapshot ModelSnapshot::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::io_error, "cannot open snapshot: " + path);
    }
    auto read_u32 = [&] {
        uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto read_u64 = [&] {
        uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    auto read_str = [&] {
        uint64_t n = read_u64();
        std::string s(n, '\0');
        in.read(s.data(), static_cast<std::streamsize>(n));
        return s;
    };
    if (read_u32() != kSnapshotMagic) {
        throw Error(ErrorCode::format_error, "not a snapshot file: " + path);
    }
    if (read_u32() != 1) {
        throw Error(ErrorCode::format_error, "unsupported snapshot version: " + path);
    }
    ModelSnapshot snap;
    snap.snapshot_id = read_str();
    snap.arch_fingerprint = read_u64();
    snap.parameters.resize(read_u64());
    in.read(reinterpret_cast<char*>(snap.parameters.data()),
            static_cast<std::streamsize>(snap.parameters.size() * sizeof(double)));
    uint64_t n_entries = read_u64();
    for (uint64_t i = 0; i < n_entries; ++i) {
        MemoryEntry e;
        e.case_id = read_str();
        e.prompt = read_str();
        e.sentence = read_str();
        e.embedding.resize(static_cast<Eigen::Index>(read_u64()));
        in.read(reinterpret_cast<char*>(e.embedding.data()),
                static_cast<std::streamsize>(e.embedding.size() * sizeof(double)));
        snap.memory_entries.push_back(std::move(e));
    }
    if (!in) {
        throw Error(ErrorCode::format_error, "truncated snapshot: " + path);
    }
    return snap;
}

int default_edit_layer(const std::string& model_id, int fallback) {
    if (model_id.find("llama2-7b") != std::string::npos ||
        model_id.find("llama-2-7b") != std::string::npos) {
        return 5;
    }
    if (model_id.find("gpt2-xl") != std::string::npos) {
        return 17;
    }
    return fallback;
}

} // namespace debiaslab
