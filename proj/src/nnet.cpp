#include "fairtune/nnet.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

namespace fairtune::nnet {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kRopeBase = 10000.0;

struct LnOut {
    Mat y, xhat;
    Vec rstd;
};

LnOut layer_norm(const Mat& x, const Mat& g, const Mat& b) {
    LnOut o;
    const auto n = x.rows();
    const auto d = x.cols();
    o.xhat.resize(n, d);
    o.rstd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        const double r = 1.0 / std::sqrt(var + kLnEps);
        o.rstd[i] = r;
        o.xhat.row(i) = (x.row(i).array() - mean) * r;
    }
    o.y = (o.xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
    return o;
}

// Accumulates gain/bias gradients and returns dL/dx.
Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Vec& rstd, const Mat& g, Mat& dg, Mat& db) {
    dg += (dy.array() * xhat.array()).colwise().sum().matrix();
    db += dy.colwise().sum();
    const Mat dxhat = dy.array().rowwise() * g.row(0).array();
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
        dx.row(i) = rstd[i] * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
    }
    return dx;
}

Mat affine(const Mat& x, const Mat& w, const Mat& b) {
    Mat y = x * w;
    y.rowwise() += b.row(0);
    return y;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

void rotate_rows(Mat& m, int tokens, int heads, int head_dim, bool inverse) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const int pos = static_cast<int>(r % tokens);
        for (int h = 0; h < heads; ++h) {
            std::span<double> seg(m.row(r).data() + static_cast<std::ptrdiff_t>(h) * head_dim,
                                  static_cast<std::size_t>(head_dim));
            rotary_encode(seg, pos, inverse);
        }
    }
}

Mat normal_mat(Eigen::Index rows, Eigen::Index cols, double sd, Rng& rng) {
    std::normal_distribution<double> dist(0.0, sd);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

Mat uniform_mat(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

Mat row_zeros(int n) { return Mat::Zero(1, n); }
Mat row_ones(int n) { return Mat::Ones(1, n); }

}  // namespace

std::string_view size_class_name(SizeClass s) {
    switch (s) {
        case SizeClass::XS: return "xs";
        case SizeClass::S: return "s";
        case SizeClass::M: return "m";
        case SizeClass::L: return "l";
    }
    return "xs";
}

SizeClass parse_size_class(std::string_view s) {
    if (s == "xs" || s == "XS") return SizeClass::XS;
    if (s == "s" || s == "S") return SizeClass::S;
    if (s == "m" || s == "M") return SizeClass::M;
    if (s == "l" || s == "L") return SizeClass::L;
    fail(ErrorKind::Usage, "unknown size class \"" + std::string(s) + "\"");
}

void NetConfig::validate() const {
    require(patch_len == synthpg::kPatchLen, ErrorKind::Invalid, "patch_len is fixed at 40");
    require(d_model >= 1 && n_layers >= 1 && n_heads >= 1 && ffn_dim >= 1 && context_patches >= 1,
            ErrorKind::Invalid, "network dimensions must be >= 1");
    require(d_model % n_heads == 0, ErrorKind::Invalid, "n_heads must divide d_model");
    require(head_dim() % 2 == 0, ErrorKind::Invalid, "rotary encoding needs an even head_dim");
    require(recon_weight >= 0.0 && std::isfinite(recon_weight), ErrorKind::Invalid, "recon_weight must be >= 0");
    require(std::isfinite(hr_center) && std::isfinite(hr_scale) && hr_scale > 0.0, ErrorKind::Invalid,
            "hr normalization must be finite with positive scale");
}

NetConfig NetConfig::for_size(SizeClass s, int context_patches) {
    NetConfig c;
    c.size_class = s;
    c.context_patches = context_patches;
    switch (s) {
        case SizeClass::XS: c.d_model = 16; c.n_layers = 1; c.n_heads = 2; break;
        case SizeClass::S: c.d_model = 32; c.n_layers = 2; c.n_heads = 4; break;
        case SizeClass::M: c.d_model = 64; c.n_layers = 3; c.n_heads = 4; break;
        case SizeClass::L: c.d_model = 128; c.n_layers = 4; c.n_heads = 8; break;
    }
    c.ffn_dim = 4 * c.d_model;
    return c;
}

std::vector<NamedTensor> named_tensors(NetParams& p) {
    std::vector<NamedTensor> out{{"embed_w", &p.embed_w}, {"embed_b", &p.embed_b}};
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        auto& L = p.layers[l];
        const std::string pre = "layers." + std::to_string(l) + ".";
        for (auto [n, m] : {std::pair{"ln1_g", &L.ln1_g}, {"ln1_b", &L.ln1_b}, {"wq", &L.wq}, {"bq", &L.bq},
                            {"wk", &L.wk}, {"bk", &L.bk}, {"wv", &L.wv}, {"bv", &L.bv}, {"wo", &L.wo},
                            {"bo", &L.bo}, {"ln2_g", &L.ln2_g}, {"ln2_b", &L.ln2_b}, {"w1", &L.w1},
                            {"b1", &L.b1}, {"w2", &L.w2}, {"b2", &L.b2}}) {
            out.push_back({pre + n, m});
        }
    }
    out.push_back({"lnf_g", &p.lnf_g});
    out.push_back({"lnf_b", &p.lnf_b});
    out.push_back({"hr_w", &p.hr_w});
    out.push_back({"hr_b", &p.hr_b});
    out.push_back({"rec_w", &p.rec_w});
    out.push_back({"rec_b", &p.rec_b});
    return out;
}

std::vector<ConstNamedTensor> named_tensors(const NetParams& p) {
    std::vector<ConstNamedTensor> out;
    for (auto& t : named_tensors(const_cast<NetParams&>(p))) out.push_back({std::move(t.name), t.value});
    return out;
}

NetParams zeros_like(const NetParams& p) {
    NetParams z = p;
    for (auto& t : named_tensors(z)) t.value->setZero();
    return z;
}

std::size_t parameter_count(const NetParams& p) {
    std::size_t n = 0;
    for (const auto& t : named_tensors(p)) n += static_cast<std::size_t>(t.value->size());
    return n;
}

std::size_t parameter_count(const NetConfig& cfg) {
    cfg.validate();
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t f = static_cast<std::size_t>(cfg.ffn_dim);
    const std::size_t p = static_cast<std::size_t>(cfg.patch_len);
    const std::size_t per_layer = 4 * d + 4 * (d * d + d) + (d * f + f) + (f * d + d);
    return (p * d + d) + static_cast<std::size_t>(cfg.n_layers) * per_layer + 2 * d + (d + 1) + (d * 2 * p + 2 * p);
}

bool all_finite(const NetParams& p) {
    for (const auto& t : named_tensors(p)) {
        if (!t.value->allFinite()) return false;
    }
    return true;
}

bool bitwise_equal(const NetParams& a, const NetParams& b) {
    const auto ta = named_tensors(a);
    const auto tb = named_tensors(b);
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        const Mat& x = *ta[i].value;
        const Mat& y = *tb[i].value;
        if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
        if (std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) != 0) return false;
    }
    return true;
}

TinyPpgNet init_net(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const int d = cfg.d_model;
    const int f = cfg.ffn_dim;
    const int p = cfg.patch_len;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double resid_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);

    NetParams w;
    w.embed_w = normal_mat(p, d, 1.0 / std::sqrt(static_cast<double>(p)), rng);
    w.embed_b = row_zeros(d);
    for (int l = 0; l < cfg.n_layers; ++l) {
        LayerParams L;
        L.ln1_g = row_ones(d);
        L.ln1_b = row_zeros(d);
        L.wq = normal_mat(d, d, inv_sqrt_d, rng);
        L.wk = normal_mat(d, d, inv_sqrt_d, rng);
        L.wv = normal_mat(d, d, inv_sqrt_d, rng);
        L.wo = normal_mat(d, d, inv_sqrt_d * resid_scale, rng);
        L.bq = row_zeros(d);
        L.bk = row_zeros(d);
        L.bv = row_zeros(d);
        L.bo = row_zeros(d);
        L.ln2_g = row_ones(d);
        L.ln2_b = row_zeros(d);
        L.w1 = normal_mat(d, f, inv_sqrt_d, rng);
        L.b1 = row_zeros(f);
        L.w2 = normal_mat(f, d, resid_scale / std::sqrt(static_cast<double>(f)), rng);
        L.b2 = row_zeros(d);
        w.layers.push_back(std::move(L));
    }
    w.lnf_g = row_ones(d);
    w.lnf_b = row_zeros(d);
    // Heads use the usual fan-in uniform initialization of a dense layer.
    w.hr_w = uniform_mat(d, 1, inv_sqrt_d, rng);
    w.hr_b = uniform_mat(1, 1, inv_sqrt_d, rng);
    w.rec_w = normal_mat(d, 2 * p, 0.1 * inv_sqrt_d, rng);
    w.rec_b = row_zeros(2 * p);
    return {cfg, std::move(w)};
}

Mat batch_signals(std::span<const synthpg::PpgRecord* const> records, const NetConfig& cfg) {
    const auto len = static_cast<std::size_t>(cfg.seq_len());
    Mat m(static_cast<Eigen::Index>(records.size()), cfg.seq_len());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& s = records[i]->signal;
        require(s.size() == len, ErrorKind::Invalid,
                "record signal length " + std::to_string(s.size()) + " != context length " + std::to_string(len));
        m.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(s.data(), cfg.seq_len());
    }
    return m;
}

Mat batch_signals(std::span<const synthpg::PpgRecord> records, const NetConfig& cfg) {
    std::vector<const synthpg::PpgRecord*> ptrs;
    ptrs.reserve(records.size());
    for (const auto& r : records) ptrs.push_back(&r);
    return batch_signals(ptrs, cfg);
}

void rotary_encode(std::span<double> vec, int position, bool inverse) {
    require(vec.size() % 2 == 0, ErrorKind::Invalid, "rotary encoding needs an even head_dim");
    if (position == 0) return;
    const double len = static_cast<double>(vec.size());
    for (std::size_t j = 0; j < vec.size() / 2; ++j) {
        const double theta = std::pow(kRopeBase, -2.0 * static_cast<double>(j) / len);
        const double angle = (inverse ? -1.0 : 1.0) * position * theta;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double a = vec[2 * j];
        const double b = vec[2 * j + 1];
        vec[2 * j] = a * c - b * s;
        vec[2 * j + 1] = a * s + b * c;
    }
}

ForwardOutput forward(const TinyPpgNet& net, const Mat& signals, ForwardCache* cache) {
    const NetConfig& cfg = net.config;
    const NetParams& w = net.params;
    require(signals.cols() == cfg.seq_len(), ErrorKind::Invalid,
            "forward: signal length " + std::to_string(signals.cols()) + " != " + std::to_string(cfg.seq_len()));
    require(signals.rows() >= 1, ErrorKind::Invalid, "forward: empty batch");

    const int B = static_cast<int>(signals.rows());
    const int T = cfg.context_patches;
    const int H = cfg.n_heads;
    const int hd = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    // Row-major (B x T*40) reinterpreted as (B*T x 40).
    Mat patches = Eigen::Map<const Mat>(signals.data(), static_cast<Eigen::Index>(B) * T, cfg.patch_len);
    Mat x = affine(patches, w.embed_w, w.embed_b);

    if (cache) {
        cache->batch = B;
        cache->layers.clear();
    }

    for (const auto& L : w.layers) {
        LayerCache lc;
        lc.x_in = x;
        auto ln1 = layer_norm(x, L.ln1_g, L.ln1_b);
        Mat q = affine(ln1.y, L.wq, L.bq);
        Mat k = affine(ln1.y, L.wk, L.bk);
        Mat v = affine(ln1.y, L.wv, L.bv);
        rotate_rows(q, T, H, hd, false);
        rotate_rows(k, T, H, hd, false);

        Mat att = Mat::Zero(x.rows(), cfg.d_model);
        Mat probs = Mat::Zero(static_cast<Eigen::Index>(B) * H * T, T);
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < H; ++h) {
                const auto qb = q.block(b * T, h * hd, T, hd);
                const auto kb = k.block(b * T, h * hd, T, hd);
                const auto vb = v.block(b * T, h * hd, T, hd);
                auto pb = probs.block((b * H + h) * T, 0, T, T);
                for (int i = 0; i < T; ++i) {
                    double mx = -std::numeric_limits<double>::infinity();
                    for (int j = 0; j <= i; ++j) {
                        pb(i, j) = qb.row(i).dot(kb.row(j)) * scale;
                        mx = std::max(mx, pb(i, j));
                    }
                    double sum = 0.0;
                    for (int j = 0; j <= i; ++j) {
                        pb(i, j) = std::exp(pb(i, j) - mx);
                        sum += pb(i, j);
                    }
                    for (int j = 0; j <= i; ++j) pb(i, j) /= sum;
                }
                att.block(b * T, h * hd, T, hd).noalias() = pb * vb;
            }
        }
        Mat x_mid = x + affine(att, L.wo, L.bo);
        auto ln2 = layer_norm(x_mid, L.ln2_g, L.ln2_b);
        Mat a1 = affine(ln2.y, L.w1, L.b1);
        Mat g1 = a1.unaryExpr([](double t) { return gelu(t); });
        x = x_mid + affine(g1, L.w2, L.b2);

        if (cache) {
            lc.xhat1 = std::move(ln1.xhat);
            lc.rstd1 = std::move(ln1.rstd);
            lc.h1 = std::move(ln1.y);
            lc.q = std::move(q);
            lc.k = std::move(k);
            lc.v = std::move(v);
            lc.probs = std::move(probs);
            lc.att = std::move(att);
            lc.x_mid = std::move(x_mid);
            lc.xhat2 = std::move(ln2.xhat);
            lc.rstd2 = std::move(ln2.rstd);
            lc.h2 = std::move(ln2.y);
            lc.a1 = std::move(a1);
            lc.g1 = std::move(g1);
            cache->layers.push_back(std::move(lc));
        }
    }

    auto lnf = layer_norm(x, w.lnf_g, w.lnf_b);
    ForwardOutput out;
    out.penultimate.resize(B, cfg.d_model);
    for (int b = 0; b < B; ++b) out.penultimate.row(b) = lnf.y.middleRows(b * T, T).colwise().mean();
    out.hr_raw = (out.penultimate * w.hr_w).col(0).array() + w.hr_b(0, 0);
    out.hr_pred = (cfg.hr_center + cfg.hr_scale * out.hr_raw.array()).matrix();
    out.recon = affine(lnf.y, w.rec_w, w.rec_b);

    if (cache) {
        cache->patches = std::move(patches);
        cache->xhatf = std::move(lnf.xhat);
        cache->rstdf = std::move(lnf.rstd);
        cache->z = std::move(lnf.y);
    }
    return out;
}

NetParams backward(const TinyPpgNet& net, const ForwardCache& cache, const OutputGrads& grads) {
    const NetConfig& cfg = net.config;
    const NetParams& w = net.params;
    const int B = cache.batch;
    const int T = cfg.context_patches;
    const int H = cfg.n_heads;
    const int hd = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    require(grads.d_hr_raw.size() == B, ErrorKind::Invalid, "backward: d_hr_raw size mismatch");

    NetParams g = zeros_like(w);

    // Heads.
    Mat pooled(B, cfg.d_model);
    for (int b = 0; b < B; ++b) pooled.row(b) = cache.z.middleRows(b * T, T).colwise().mean();
    g.hr_w.col(0) = pooled.transpose() * grads.d_hr_raw;
    g.hr_b(0, 0) = grads.d_hr_raw.sum();
    Mat d_pooled = grads.d_hr_raw * w.hr_w.transpose();
    if (grads.d_penultimate.size() > 0) {
        require(grads.d_penultimate.rows() == B && grads.d_penultimate.cols() == cfg.d_model, ErrorKind::Invalid,
                "backward: d_penultimate shape mismatch");
        d_pooled += grads.d_penultimate;
    }

    Mat dz = Mat::Zero(cache.z.rows(), cfg.d_model);
    if (grads.d_recon.size() > 0) {
        require(grads.d_recon.rows() == cache.z.rows() && grads.d_recon.cols() == 2 * cfg.patch_len,
                ErrorKind::Invalid, "backward: d_recon shape mismatch");
        g.rec_w.noalias() = cache.z.transpose() * grads.d_recon;
        g.rec_b = grads.d_recon.colwise().sum();
        dz.noalias() = grads.d_recon * w.rec_w.transpose();
    }
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < T; ++t) dz.row(b * T + t) += d_pooled.row(b) / static_cast<double>(T);
    }

    Mat dx = layer_norm_backward(dz, cache.xhatf, cache.rstdf, w.lnf_g, g.lnf_g, g.lnf_b);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& L = w.layers[static_cast<std::size_t>(l)];
        const auto& c = cache.layers[static_cast<std::size_t>(l)];
        auto& G = g.layers[static_cast<std::size_t>(l)];

        // Feed-forward residual branch.
        G.w2.noalias() = c.g1.transpose() * dx;
        G.b2 = dx.colwise().sum();
        Mat da1 = dx * L.w2.transpose();
        da1.array() *= c.a1.unaryExpr([](double t) { return gelu_grad(t); }).array();
        G.w1.noalias() = c.h2.transpose() * da1;
        G.b1 = da1.colwise().sum();
        const Mat dh2 = da1 * L.w1.transpose();
        Mat dx_mid = dx + layer_norm_backward(dh2, c.xhat2, c.rstd2, L.ln2_g, G.ln2_g, G.ln2_b);

        // Attention residual branch.
        G.wo.noalias() = c.att.transpose() * dx_mid;
        G.bo = dx_mid.colwise().sum();
        const Mat datt = dx_mid * L.wo.transpose();
        Mat dq = Mat::Zero(c.q.rows(), c.q.cols());
        Mat dk = Mat::Zero(c.k.rows(), c.k.cols());
        Mat dv = Mat::Zero(c.v.rows(), c.v.cols());
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < H; ++h) {
                const auto qb = c.q.block(b * T, h * hd, T, hd);
                const auto kb = c.k.block(b * T, h * hd, T, hd);
                const auto vb = c.v.block(b * T, h * hd, T, hd);
                const auto pb = c.probs.block((b * H + h) * T, 0, T, T);
                const auto dob = datt.block(b * T, h * hd, T, hd);
                dv.block(b * T, h * hd, T, hd).noalias() += pb.transpose() * dob;
                const Mat dp = dob * vb.transpose();
                Mat ds = Mat::Zero(T, T);
                for (int i = 0; i < T; ++i) {
                    double inner = 0.0;
                    for (int j = 0; j <= i; ++j) inner += pb(i, j) * dp(i, j);
                    for (int j = 0; j <= i; ++j) ds(i, j) = pb(i, j) * (dp(i, j) - inner) * scale;
                }
                dq.block(b * T, h * hd, T, hd).noalias() += ds * kb;
                dk.block(b * T, h * hd, T, hd).noalias() += ds.transpose() * qb;
            }
        }
        rotate_rows(dq, T, H, hd, true);
        rotate_rows(dk, T, H, hd, true);
        G.wq.noalias() = c.h1.transpose() * dq;
        G.bq = dq.colwise().sum();
        G.wk.noalias() = c.h1.transpose() * dk;
        G.bk = dk.colwise().sum();
        G.wv.noalias() = c.h1.transpose() * dv;
        G.bv = dv.colwise().sum();
        Mat dh1 = dq * L.wq.transpose();
        dh1.noalias() += dk * L.wk.transpose();
        dh1.noalias() += dv * L.wv.transpose();
        dx = dx_mid + layer_norm_backward(dh1, c.xhat1, c.rstd1, L.ln1_g, G.ln1_g, G.ln1_b);
    }

    g.embed_w.noalias() = cache.patches.transpose() * dx;
    g.embed_b = dx.colwise().sum();
    return g;
}

}  // namespace fairtune::nnet
