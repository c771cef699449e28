#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "uslam/core/image.hpp"
#include "uslam/loss_weights.hpp"

namespace uslam::uncertainty {

/// Per-frame feature grid at 1/stride of the image resolution.
struct FeatureMap {
    GridD data;  // (H/s) x (W/s) x C
    int stride = 1;

    int channels() const { return data.c; }
};

using UncertaintyMap = GridD;  // H x W, >= beta_min everywhere

/// Shallow MLP: [C, hidden, hidden, 1], rectifier on hidden layers,
/// softplus + beta_min floor on the output.
struct UncertaintyModel {
    std::vector<Eigen::MatrixXd> w;  // row-major per layer
    std::vector<Eigen::VectorXd> b;
    double beta_min = 0.1;

    static UncertaintyModel create(int in_channels, int hidden, uint64_t seed);

    int input_channels() const { return w.empty() ? 0 : int(w.front().cols()); }

    /// beta for a single feature vector.
    double predict_one(const Eigen::VectorXd& f) const;

    bool bitwise_equal(const UncertaintyModel& o) const;
};

/// Per-cell MLP evaluation followed by bilinear upsampling to (out_h, out_w).
/// Cell centers are interpolation knots, so sampling the result at a cell
/// center reproduces that cell's MLP output.
UncertaintyMap predict_uncertainty(const UncertaintyModel& model, const FeatureMap& F,
                                   int out_h, int out_w);

/// Continuous cell coordinate of an output pixel (shared by predict/backprop).
inline double cell_coord(int pixel, int out_extent, int cells) {
    return (pixel + 0.5) / double(out_extent) * cells - 0.5;
}

struct UncertaintyLossBreakdown {
    double data = 0;   // mean (L'_ssim + lambda1 |D_hat - D_tilde|) / beta^2
    double reg_v = 0;  // lambda2 * variance among similar features
    double reg_u = 0;  // lambda3 * mean log beta
    double total = 0;
};

/// Neighbor sets for the variance regularizer: for each cell, up to k cells
/// with the highest cosine similarity above the threshold. Depends only on
/// the feature map, so callers should cache it per keyframe.
std::vector<std::vector<int>> regv_neighbors(const FeatureMap& F, int k = 8,
                                             double min_cosine = 0.9);

UncertaintyLossBreakdown uncertainty_loss(
    const GridD& rendered_color, const GridD& rendered_depth, const GridD& observed,
    const GridD& proxy_depth, const UncertaintyMap& beta, const FeatureMap& F,
    const UncertaintyModel& model, const LossWeights& w,
    const std::vector<std::vector<int>>* neighbors = nullptr);

/// Gradient of the uncertainty loss with respect to every MLP weight, with
/// the rendered images treated as constants (detached).
struct ModelGradients {
    std::vector<Eigen::MatrixXd> w;
    std::vector<Eigen::VectorXd> b;
};

ModelGradients uncertainty_loss_gradients(
    const GridD& rendered_color, const GridD& rendered_depth, const GridD& observed,
    const GridD& proxy_depth, const FeatureMap& F, const UncertaintyModel& model,
    const LossWeights& w, const std::vector<std::vector<int>>* neighbors = nullptr,
    UncertaintyLossBreakdown* breakdown = nullptr);

/// Owns the Adam moments; the model itself stays a value type.
class UncertaintyTrainer {
  public:
    UncertaintyTrainer(UncertaintyModel model, double learning_rate = 1e-3);

    const UncertaintyModel& model() const { return model_; }

    /// One adaptive-moment step on the uncertainty loss. Returns the loss
    /// breakdown evaluated before the update.
    UncertaintyLossBreakdown train_step(
        const GridD& rendered_color, const GridD& rendered_depth,
        const GridD& observed, const GridD& proxy_depth, const FeatureMap& F,
        const LossWeights& w,
        const std::vector<std::vector<int>>* neighbors = nullptr);

    void apply(const ModelGradients& g);

    double learning_rate = 1e-3;

  private:
    UncertaintyModel model_;
    ModelGradients m_, v_;
    long step_ = 0;
};

/// Checkpoint: magic "UMLP", u32 version, u32 layer count, u32 dims,
/// f64 beta_min, then f32 weights row-major (weights then bias per layer).
void save_model(const std::string& path, const UncertaintyModel& model);
UncertaintyModel load_model(const std::string& path);

}  // namespace uslam::uncertainty
