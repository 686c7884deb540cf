#pragma once

#include "capsprobe/data.hpp"
#include "capsprobe/model.hpp"

namespace capsprobe {

struct TrainOptions {
  std::size_t epochs = 10;
  double lr = 0.05;
  std::size_t batch = 32;
};

struct TrainingReport {
  std::vector<double> epoch_mean_loss;
  double final_train_accuracy = 0.0;
};

double accuracy(const Model& model, const Dataset& data);

// Mini-batch SGD with per-epoch shuffling driven by rng. Leaves the model
// trainable; callers freeze it for inference phases.
TrainingReport train_model(Model& model, const Dataset& data,
                           const TrainOptions& opt, Rng rng);

}  // namespace capsprobe
