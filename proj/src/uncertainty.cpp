#include "uslam/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "uslam/core/ssim.hpp"

namespace uslam::uncertainty {

namespace {

double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct CellForward {
    Eigen::VectorXd f, z1, a1, z2, a2;
    double y = 0, beta = 0;
};

CellForward forward_cell(const UncertaintyModel& m, const Eigen::VectorXd& f) {
    CellForward c;
    c.f = f;
    c.z1 = m.w[0] * f + m.b[0];
    c.a1 = c.z1.cwiseMax(0.0);
    c.z2 = m.w[1] * c.a1 + m.b[1];
    c.a2 = c.z2.cwiseMax(0.0);
    c.y = (m.w[2] * c.a2 + m.b[2])(0);
    c.beta = softplus(c.y) + m.beta_min;
    return c;
}

Eigen::VectorXd cell_feature(const FeatureMap& F, int idx) {
    int cy = idx / F.data.w, cx = idx % F.data.w;
    Eigen::VectorXd f(F.data.c);
    for (int c = 0; c < F.data.c; ++c) f[c] = F.data.at(cy, cx, c);
    return f;
}

GridD predict_cells(const UncertaintyModel& m, const FeatureMap& F,
                    std::vector<CellForward>* caches = nullptr) {
    if (F.channels() != m.input_channels())
        throw DimensionMismatch("feature channels do not match MLP input width");
    GridD cells(F.data.h, F.data.w, 1);
    if (caches) caches->resize(size_t(F.data.h) * F.data.w);
    for (int i = 0; i < F.data.h * F.data.w; ++i) {
        CellForward c = forward_cell(m, cell_feature(F, i));
        cells.data[size_t(i)] = c.beta;
        if (caches) (*caches)[size_t(i)] = std::move(c);
    }
    return cells;
}

GridD upsample_cells(const GridD& cells, int out_h, int out_w) {
    GridD out(out_h, out_w, 1);
    for (int y = 0; y < out_h; ++y) {
        double cyf = std::clamp(cell_coord(y, out_h, cells.h), 0.0, double(cells.h - 1));
        for (int x = 0; x < out_w; ++x) {
            double cxf =
                std::clamp(cell_coord(x, out_w, cells.w), 0.0, double(cells.w - 1));
            out.at(y, x) = cells.sample(cxf, cyf);
        }
    }
    return out;
}

/// Adjoint of upsample_cells: scatter per-pixel gradients back to cells.
GridD upsample_adjoint(const GridD& grad_pix, int cells_h, int cells_w) {
    GridD g(cells_h, cells_w, 1);
    for (int y = 0; y < grad_pix.h; ++y) {
        double cyf =
            std::clamp(cell_coord(y, grad_pix.h, cells_h), 0.0, double(cells_h - 1));
        int y0 = std::min(int(std::floor(cyf)), cells_h - 1);
        int y1 = std::min(y0 + 1, cells_h - 1);
        double fy = cyf - y0;
        for (int x = 0; x < grad_pix.w; ++x) {
            double cxf =
                std::clamp(cell_coord(x, grad_pix.w, cells_w), 0.0, double(cells_w - 1));
            int x0 = std::min(int(std::floor(cxf)), cells_w - 1);
            int x1 = std::min(x0 + 1, cells_w - 1);
            double fx = cxf - x0;
            double gv = grad_pix.at(y, x);
            g.at(y0, x0) += gv * (1 - fy) * (1 - fx);
            g.at(y0, x1) += gv * (1 - fy) * fx;
            g.at(y1, x0) += gv * fy * (1 - fx);
            g.at(y1, x1) += gv * fy * fx;
        }
    }
    return g;
}

/// Per-pixel residual magnitude the uncertainty normalizes: modified SSIM
/// plus the L1 depth term. Constant w.r.t. the MLP (renders are detached).
GridD data_numerator(const GridD& rendered_color, const GridD& rendered_depth,
                     const GridD& observed, const GridD& proxy_depth,
                     const LossWeights& w) {
    require_same_shape(rendered_color, observed, "uncertainty loss: image shape");
    require_same_shape(rendered_depth, proxy_depth, "uncertainty loss: depth shape");
    auto ctx = ssim_map(rendered_color, observed);
    GridD num(rendered_depth.h, rendered_depth.w, 1);
    for (size_t i = 0; i < num.size(); ++i) {
        double lssim = 0.5 * (1.0 - ctx.map.data[i]);
        double ld = proxy_depth.data[i] > 0
                        ? std::abs(rendered_depth.data[i] - proxy_depth.data[i])
                        : 0.0;
        num.data[i] = lssim + w.lambda1 * ld;
    }
    return num;
}

double regv_value(const GridD& cells, const std::vector<std::vector<int>>& nb,
                  GridD* grad = nullptr) {
    double total = 0;
    const int n = cells.h * cells.w;
    for (int i = 0; i < n; ++i) {
        const auto& set = nb[size_t(i)];
        if (set.size() < 2) continue;
        double mean = 0;
        for (int j : set) mean += cells.data[size_t(j)];
        mean /= double(set.size());
        double var = 0;
        for (int j : set) {
            double d = cells.data[size_t(j)] - mean;
            var += d * d;
        }
        var /= double(set.size());
        total += var;
        if (grad)
            for (int j : set)
                grad->data[size_t(j)] +=
                    2.0 * (cells.data[size_t(j)] - mean) / double(set.size()) / double(n);
    }
    return total / double(n);
}

}  // namespace

UncertaintyModel UncertaintyModel::create(int in_channels, int hidden, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0, 1);
    UncertaintyModel m;
    std::vector<std::pair<int, int>> dims = {
        {hidden, in_channels}, {hidden, hidden}, {1, hidden}};
    for (auto [rows, cols] : dims) {
        Eigen::MatrixXd wi(rows, cols);
        double scale = std::sqrt(2.0 / cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) wi(r, c) = scale * nd(rng);
        m.w.push_back(wi);
        m.b.push_back(Eigen::VectorXd::Zero(rows));
    }
    return m;
}

double UncertaintyModel::predict_one(const Eigen::VectorXd& f) const {
    return forward_cell(*this, f).beta;
}

bool UncertaintyModel::bitwise_equal(const UncertaintyModel& o) const {
    if (w.size() != o.w.size()) return false;
    for (size_t i = 0; i < w.size(); ++i)
        if (std::memcmp(w[i].data(), o.w[i].data(), sizeof(double) * w[i].size()) != 0 ||
            std::memcmp(b[i].data(), o.b[i].data(), sizeof(double) * b[i].size()) != 0)
            return false;
    return true;
}

UncertaintyMap predict_uncertainty(const UncertaintyModel& model, const FeatureMap& F,
                                   int out_h, int out_w) {
    return upsample_cells(predict_cells(model, F), out_h, out_w);
}

std::vector<std::vector<int>> regv_neighbors(const FeatureMap& F, int k,
                                             double min_cosine) {
    const int n = F.data.h * F.data.w;
    const size_t un = static_cast<size_t>(n);
    std::vector<Eigen::VectorXd> f(un);
    std::vector<double> norm(un);
    for (int i = 0; i < n; ++i) {
        f[size_t(i)] = cell_feature(F, i);
        norm[size_t(i)] = std::max(f[size_t(i)].norm(), 1e-12);
    }
    std::vector<std::vector<int>> nb(un);
    std::vector<std::pair<double, int>> cand;
    for (int i = 0; i < n; ++i) {
        cand.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double cos = f[size_t(i)].dot(f[size_t(j)]) / (norm[size_t(i)] * norm[size_t(j)]);
            if (cos > min_cosine) cand.emplace_back(cos, j);
        }
        size_t keep = std::min<size_t>(size_t(k), cand.size());
        std::partial_sort(cand.begin(), cand.begin() + long(keep), cand.end(),
                          [](auto& a, auto& b) {
                              return a.first != b.first ? a.first > b.first
                                                        : a.second < b.second;
                          });
        auto& set = nb[size_t(i)];
        set.push_back(i);
        for (size_t t = 0; t < keep; ++t) set.push_back(cand[t].second);
    }
    return nb;
}

UncertaintyLossBreakdown uncertainty_loss(
    const GridD& rendered_color, const GridD& rendered_depth, const GridD& observed,
    const GridD& proxy_depth, const UncertaintyMap& beta, const FeatureMap& F,
    const UncertaintyModel& model, const LossWeights& w,
    const std::vector<std::vector<int>>* neighbors) {
    require_same_shape(rendered_depth, beta, "uncertainty loss: beta shape");
    GridD num = data_numerator(rendered_color, rendered_depth, observed, proxy_depth, w);
    UncertaintyLossBreakdown out;
    for (size_t i = 0; i < num.size(); ++i) {
        double b = beta.data[i];
        out.data += num.data[i] / (b * b);
        out.reg_u += std::log(b);
    }
    out.data /= double(num.size());
    out.reg_u = w.lambda3 * out.reg_u / double(num.size());

    GridD cells = predict_cells(model, F);
    std::vector<std::vector<int>> local;
    if (!neighbors) {
        local = regv_neighbors(F);
        neighbors = &local;
    }
    out.reg_v = w.lambda2 * regv_value(cells, *neighbors);
    out.total = out.data + out.reg_v + out.reg_u;
    return out;
}

ModelGradients uncertainty_loss_gradients(
    const GridD& rendered_color, const GridD& rendered_depth, const GridD& observed,
    const GridD& proxy_depth, const FeatureMap& F, const UncertaintyModel& model,
    const LossWeights& w, const std::vector<std::vector<int>>* neighbors,
    UncertaintyLossBreakdown* breakdown) {
    std::vector<CellForward> caches;
    GridD cells = predict_cells(model, F, &caches);
    const int H = rendered_depth.h, W = rendered_depth.w;
    GridD beta = upsample_cells(cells, H, W);
    GridD num = data_numerator(rendered_color, rendered_depth, observed, proxy_depth, w);
    const double n_pix = double(num.size());

    UncertaintyLossBreakdown bd;
    GridD d_beta_pix(H, W, 1);
    for (size_t i = 0; i < num.size(); ++i) {
        double b = beta.data[i];
        bd.data += num.data[i] / (b * b);
        bd.reg_u += std::log(b);
        d_beta_pix.data[i] = (-2.0 * num.data[i] / (b * b * b) + w.lambda3 / b) / n_pix;
    }
    bd.data /= n_pix;
    bd.reg_u = w.lambda3 * bd.reg_u / n_pix;

    GridD d_cells = upsample_adjoint(d_beta_pix, cells.h, cells.w);

    std::vector<std::vector<int>> local;
    if (!neighbors) {
        local = regv_neighbors(F);
        neighbors = &local;
    }
    GridD d_cells_regv(cells.h, cells.w, 1);
    bd.reg_v = w.lambda2 * regv_value(cells, *neighbors, &d_cells_regv);
    for (size_t i = 0; i < d_cells.size(); ++i)
        d_cells.data[i] += w.lambda2 * d_cells_regv.data[i];
    bd.total = bd.data + bd.reg_v + bd.reg_u;
    if (breakdown) *breakdown = bd;

    ModelGradients g;
    for (size_t l = 0; l < model.w.size(); ++l) {
        g.w.emplace_back(Eigen::MatrixXd::Zero(model.w[l].rows(), model.w[l].cols()));
        g.b.emplace_back(Eigen::VectorXd::Zero(model.b[l].size()));
    }
    for (size_t i = 0; i < caches.size(); ++i) {
        double gb = d_cells.data[i];
        if (gb == 0) continue;
        const CellForward& c = caches[i];
        double gy = gb * sigmoid(c.y);
        // layer 3
        g.w[2].row(0) += gy * c.a2.transpose();
        g.b[2](0) += gy;
        Eigen::VectorXd ga2 = gy * model.w[2].row(0).transpose();
        Eigen::VectorXd gz2 =
            (c.z2.array() > 0).select(ga2.array(), 0.0).matrix();
        g.w[1] += gz2 * c.a1.transpose();
        g.b[1] += gz2;
        Eigen::VectorXd ga1 = model.w[1].transpose() * gz2;
        Eigen::VectorXd gz1 =
            (c.z1.array() > 0).select(ga1.array(), 0.0).matrix();
        g.w[0] += gz1 * c.f.transpose();
        g.b[0] += gz1;
    }
    return g;
}

UncertaintyTrainer::UncertaintyTrainer(UncertaintyModel model, double lr)
    : learning_rate(lr), model_(std::move(model)) {
    for (size_t l = 0; l < model_.w.size(); ++l) {
        m_.w.emplace_back(Eigen::MatrixXd::Zero(model_.w[l].rows(), model_.w[l].cols()));
        m_.b.emplace_back(Eigen::VectorXd::Zero(model_.b[l].size()));
        v_.w.emplace_back(Eigen::MatrixXd::Zero(model_.w[l].rows(), model_.w[l].cols()));
        v_.b.emplace_back(Eigen::VectorXd::Zero(model_.b[l].size()));
    }
}

void UncertaintyTrainer::apply(const ModelGradients& g) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++step_;
    double c1 = 1.0 - std::pow(b1, double(step_));
    double c2 = 1.0 - std::pow(b2, double(step_));
    for (size_t l = 0; l < model_.w.size(); ++l) {
        m_.w[l] = b1 * m_.w[l] + (1 - b1) * g.w[l];
        v_.w[l] = b2 * v_.w[l] + (1 - b2) * g.w[l].cwiseProduct(g.w[l]);
        model_.w[l] -= learning_rate *
                       (m_.w[l] / c1)
                           .cwiseQuotient(((v_.w[l] / c2).cwiseSqrt().array() + eps)
                                              .matrix());
        m_.b[l] = b1 * m_.b[l] + (1 - b1) * g.b[l];
        v_.b[l] = b2 * v_.b[l] + (1 - b2) * g.b[l].cwiseProduct(g.b[l]);
        model_.b[l] -= learning_rate *
                       (m_.b[l] / c1)
                           .cwiseQuotient(((v_.b[l] / c2).cwiseSqrt().array() + eps)
                                              .matrix());
    }
}

UncertaintyLossBreakdown UncertaintyTrainer::train_step(
    const GridD& rendered_color, const GridD& rendered_depth, const GridD& observed,
    const GridD& proxy_depth, const FeatureMap& F, const LossWeights& w,
    const std::vector<std::vector<int>>* neighbors) {
    UncertaintyLossBreakdown bd;
    ModelGradients g = uncertainty_loss_gradients(rendered_color, rendered_depth,
                                                  observed, proxy_depth, F, model_, w,
                                                  neighbors, &bd);
    apply(g);
    return bd;
}

void save_model(const std::string& path, const UncertaintyModel& model) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    uint32_t magic = 0x504c4d55u;  // "UMLP"
    uint32_t version = 1;
    uint32_t layers = uint32_t(model.w.size());
    f.write(reinterpret_cast<const char*>(&magic), 4);
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&layers), 4);
    for (const auto& wl : model.w) {
        uint32_t dims[2] = {uint32_t(wl.rows()), uint32_t(wl.cols())};
        f.write(reinterpret_cast<const char*>(dims), 8);
    }
    double bm = model.beta_min;
    f.write(reinterpret_cast<const char*>(&bm), 8);
    for (size_t l = 0; l < model.w.size(); ++l) {
        for (int r = 0; r < model.w[l].rows(); ++r)
            for (int c = 0; c < model.w[l].cols(); ++c) {
                float v = float(model.w[l](r, c));
                f.write(reinterpret_cast<const char*>(&v), 4);
            }
        for (int r = 0; r < model.b[l].size(); ++r) {
            float v = float(model.b[l](r));
            f.write(reinterpret_cast<const char*>(&v), 4);
        }
    }
    if (!f) throw IoError("write failed: " + path);
}

UncertaintyModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    uint32_t magic = 0, version = 0, layers = 0;
    f.read(reinterpret_cast<char*>(&magic), 4);
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&layers), 4);
    if (!f || magic != 0x504c4d55u || version != 1)
        throw IoError("bad model file: " + path);
    std::vector<std::pair<uint32_t, uint32_t>> dims(layers);
    for (auto& d : dims) f.read(reinterpret_cast<char*>(&d), 8);
    UncertaintyModel m;
    f.read(reinterpret_cast<char*>(&m.beta_min), 8);
    for (auto [rows, cols] : dims) {
        Eigen::MatrixXd wl(rows, cols);
        for (uint32_t r = 0; r < rows; ++r)
            for (uint32_t c = 0; c < cols; ++c) {
                float v;
                f.read(reinterpret_cast<char*>(&v), 4);
                wl(r, c) = v;
            }
        Eigen::VectorXd bl(rows);
        for (uint32_t r = 0; r < rows; ++r) {
            float v;
            f.read(reinterpret_cast<char*>(&v), 4);
            bl(r) = v;
        }
        m.w.push_back(wl);
        m.b.push_back(bl);
    }
    if (!f) throw IoError("truncated model file: " + path);
    return m;
}

}  // namespace uslam::uncertainty
