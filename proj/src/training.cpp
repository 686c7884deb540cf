#include "capsprobe/training.hpp"

#include <numeric>
#include <stdexcept>

#include "capsprobe/parallel.hpp"

namespace capsprobe {

double accuracy(const Model& model, const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("accuracy: empty dataset");
  std::vector<unsigned char> hit(data.size(), 0);
  parallel_for(data.size(), [&](std::size_t i) {
    hit[i] = model.predict(data[i].pixels) == data[i].label ? 1 : 0;
  });
  std::size_t hits = std::accumulate(hit.begin(), hit.end(), std::size_t{0});
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

TrainingReport train_model(Model& model, const Dataset& data,
                           const TrainOptions& opt, Rng rng) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (!(opt.lr >= 0.0)) throw std::invalid_argument("train: lr must be >= 0");
  if (opt.batch == 0) throw std::invalid_argument("train: batch must be >= 1");

  model.set_trainable(true);
  std::vector<Tensor> params = model.parameters();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainingReport report;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = rng.uniform_int(i);
      std::swap(order[i - 1], order[j]);
    }
    double loss_sum = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      std::size_t batch = std::min(opt.batch, order.size() - done);
      double inv = 1.0 / static_cast<double>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        const LabeledImage& item = data[order[done + b]];
        Tape tape;
        Tensor loss = model.loss(item.pixels, item.label);
        loss_sum += loss.item();
        tape.backward(scale(loss, inv));  // grads accumulate over the batch
      }
      sgd_step(params, opt.lr);
      done += batch;
    }
    report.epoch_mean_loss.push_back(loss_sum /
                                     static_cast<double>(order.size()));
  }
  report.final_train_accuracy = accuracy(model, data);
  return report;
}

}  // namespace capsprobe
