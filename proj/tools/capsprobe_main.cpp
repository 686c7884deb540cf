// capsprobe: train, evaluate, explain, attack and benchmark the toy
// classifier families on desk-scale datasets.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "capsprobe/attack.hpp"
#include "capsprobe/bench.hpp"
#include "capsprobe/capsnet.hpp"
#include "capsprobe/checkpoint.hpp"
#include "capsprobe/convnet.hpp"
#include "capsprobe/explain.hpp"
#include "capsprobe/gracapsnet.hpp"
#include "capsprobe/training.hpp"
#include "capsprobe/vit.hpp"

namespace fs = std::filesystem;
using namespace capsprobe;

namespace {

constexpr const char* kVersion = "capsprobe 0.1.0";

struct CommonArgs {
  std::uint64_t seed = 0;
  std::string out;
  std::string data = "synth:256";
  std::size_t routing_iters = 3;
  double attn_temp = 1.0;
};

struct EffectiveConfig {
  std::vector<std::pair<std::string, std::string>> entries;

  void add(const std::string& key, const std::string& value) {
    entries.emplace_back(key, value);
  }
  void add(const std::string& key, std::uint64_t v) {
    add(key, std::to_string(v));
  }
  void add(const std::string& key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    add(key, std::string(buf));
  }

  std::string to_string() const {
    std::ostringstream os;
    for (const auto& [k, v] : entries) os << k << " = " << v << "\n";
    return os.str();
  }
};

std::string digest_hex(std::uint64_t d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "0x%016llx",
                static_cast<unsigned long long>(d));
  return buf;
}

std::uint64_t digest_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot digest missing file " + path);
  std::uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    h = fnv1a(buf, static_cast<std::size_t>(is.gcount()), h);
    if (is.eof()) break;
  }
  return h;
}

std::uint64_t digest_dataset(const Dataset& data) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& item : data) {
    h = fnv1a(item.pixels.data().data(),
              item.pixels.numel() * sizeof(double), h);
    h = fnv1a(&item.label, sizeof item.label, h);
  }
  return h;
}

// "synth:N", "synth2:N" or "idx:<images>,<labels>"
Dataset load_dataset(const std::string& spec, std::uint64_t seed,
                     EffectiveConfig& config) {
  Dataset data;
  if (spec.rfind("synth2", 0) == 0) {
    std::size_t n = spec.size() > 7 ? std::stoul(spec.substr(7)) : 256;
    data = synth_shapes(n, seed, true);
  } else if (spec.rfind("synth", 0) == 0) {
    std::size_t n = spec.size() > 6 ? std::stoul(spec.substr(6)) : 256;
    data = synth_shapes(n, seed, false);
  } else if (spec.rfind("idx:", 0) == 0) {
    std::string rest = spec.substr(4);
    auto comma = rest.find(',');
    if (comma == std::string::npos) {
      throw CLI::ValidationError("--data", "idx spec needs <images>,<labels>");
    }
    data = load_idx(rest.substr(0, comma), rest.substr(comma + 1));
  } else {
    throw CLI::ValidationError("--data", "unknown dataset spec '" + spec + "'");
  }
  config.add("data.digest", digest_hex(digest_dataset(data)));
  return data;
}

std::size_t dataset_classes(const Dataset& data) {
  std::size_t m = 0;
  for (const auto& item : data) m = std::max(m, item.label + 1);
  return std::max<std::size_t>(m, 2);
}

std::unique_ptr<Model> build_model(const std::string& kind, std::size_t classes,
                                   const CommonArgs& args, Rng init_rng) {
  if (kind == "convnet") {
    ConvNetConfig cfg;
    cfg.classes = classes;
    return std::make_unique<ConvNet>(cfg, std::move(init_rng));
  }
  if (kind == "capsnet" || kind == "affcapsnet") {
    CapsNetConfig cfg;
    cfg.classes = classes;
    cfg.routing_iters = args.routing_iters;
    cfg.shared_transform = kind == "affcapsnet";
    return std::make_unique<CapsuleNetwork>(cfg, std::move(init_rng));
  }
  if (kind == "gracapsnet") {
    GraCapsConfig cfg;
    cfg.classes = classes;
    return std::make_unique<GraCapsNet>(cfg, std::move(init_rng));
  }
  if (kind == "vit") {
    ViTConfig cfg;
    cfg.classes = classes;
    auto vit = std::make_unique<VisionTransformer>(cfg, std::move(init_rng));
    if (args.attn_temp != 1.0) {
      return std::make_unique<VisionTransformer>(
          vit->with_temperature(args.attn_temp));
    }
    return vit;
  }
  throw CLI::ValidationError("--model", "unknown model kind '" + kind + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

void finish_run(const CommonArgs& args, const std::string& subcommand,
                EffectiveConfig& config) {
  EffectiveConfig manifest;
  manifest.add("tool", kVersion);
  manifest.add("subcommand", subcommand);
  for (auto& e : config.entries) manifest.entries.push_back(e);
  write_text(fs::path(args.out) / "manifest.txt", manifest.to_string());
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--seed", args.seed, "run seed (mandatory)")->required();
  cmd->add_option("--out", args.out, "output directory")->required();
  cmd->add_option("--data", args.data,
                  "dataset: synth:N | synth2:N | idx:<images>,<labels>");
  cmd->add_option("--routing-iters", args.routing_iters,
                  "capsule routing iterations");
  cmd->add_option("--attn-temp", args.attn_temp,
                  "vit attention smoothing temperature (>= 1)");
  cmd->set_config("--config");
}

void start_run(const CommonArgs& args, EffectiveConfig& config) {
  fs::create_directories(args.out);
  config.add("seed", args.seed);
  config.add("out", args.out);
  config.add("data", args.data);
}

PatchSpec parse_patch(const std::string& text, std::size_t patch_default,
                      const Shape& image) {
  PatchSpec patch;
  if (text.empty()) {
    // centered aligned patch of the default size
    patch.height = patch.width = patch_default;
    patch.row = ((image[1] / 2) / patch_default) * patch_default;
    patch.col = ((image[2] / 2) / patch_default) * patch_default;
  } else {
    unsigned long r, c, h, w;
    if (std::sscanf(text.c_str(), "%lu,%lu,%lu,%lu", &r, &c, &h, &w) != 4) {
      throw CLI::ValidationError("--patch", "expected r,c,h,w");
    }
    patch.row = r;
    patch.col = c;
    patch.height = h;
    patch.width = w;
  }
  patch.aligned = patch.height == patch_default &&
                  patch.width == patch_default &&
                  patch.row % patch_default == 0 &&
                  patch.col % patch_default == 0;
  patch.validate(image);
  return patch;
}

int run_train(const CommonArgs& args, const std::string& model_kind,
              std::size_t epochs, double lr, std::size_t batch) {
  EffectiveConfig config;
  start_run(args, config);
  config.add("model", model_kind);
  config.add("epochs", static_cast<std::uint64_t>(epochs));
  config.add("lr", lr);
  config.add("batch", static_cast<std::uint64_t>(batch));

  Rng run_rng(args.seed);
  Dataset data = load_dataset(args.data, run_rng.split("data").next(), config);
  auto model = build_model(model_kind, dataset_classes(data), args,
                           run_rng.split("init"));

  std::cout << "effective config:\n" << config.to_string();
  TrainOptions opt{epochs, lr, batch};
  TrainingReport report = train_model(*model, data, opt, run_rng.split("train"));
  model->set_trainable(false);

  std::string ckpt = (fs::path(args.out) / "checkpoint.cprb").string();
  save_checkpoint(ckpt, model->named_parameters());
  config.add("checkpoint.digest", digest_hex(digest_file(ckpt)));

  Report out;
  out.notes.push_back("training report");
  for (std::size_t e = 0; e < report.epoch_mean_loss.size(); ++e) {
    out.records.push_back({"mean_loss", model_kind, "epoch" + std::to_string(e),
                           report.epoch_mean_loss[e], data.size()});
  }
  out.records.push_back({"train_accuracy", model_kind, "final",
                         report.final_train_accuracy, data.size()});
  write_text(fs::path(args.out) / "train_report.txt",
             config.to_string() + out.to_string());
  write_text(fs::path(args.out) / "model.cfg",
             "kind = " + model_kind +
                 "\nclasses = " + std::to_string(model->num_classes()) +
                 "\nrouting_iters = " + std::to_string(args.routing_iters) +
                 "\n");
  finish_run(args, "train", config);
  std::cout << "final train accuracy " << report.final_train_accuracy << "\n";
  return 0;
}

std::unique_ptr<Model> load_model(const CommonArgs& args,
                                  const std::string& kind,
                                  const std::string& checkpoint,
                                  const Dataset& data,
                                  EffectiveConfig& config) {
  auto model = build_model(kind, dataset_classes(data), args,
                           Rng(args.seed).split("init"));
  restore_parameters(load_checkpoint(checkpoint), model->named_parameters());
  model->set_trainable(false);
  config.add("checkpoint", checkpoint);
  config.add("checkpoint.digest", digest_hex(digest_file(checkpoint)));
  return model;
}

int run_eval(const CommonArgs& args, const std::string& model_kind,
             const std::string& checkpoint) {
  EffectiveConfig config;
  start_run(args, config);
  config.add("model", model_kind);
  Rng run_rng(args.seed);
  Dataset data = load_dataset(args.data, run_rng.split("data").next(), config);
  auto model = load_model(args, model_kind, checkpoint, data, config);
  std::cout << "effective config:\n" << config.to_string();

  Report report;
  report.notes.push_back("evaluation report");
  report.records.push_back(
      {"accuracy", model_kind, "eval", accuracy(*model, data), data.size()});
  write_text(fs::path(args.out) / "eval_report.txt",
             config.to_string() + report.to_string());
  finish_run(args, "eval", config);
  std::cout << report.to_string();
  return 0;
}

int run_explain(const CommonArgs& args, const std::string& model_kind,
                const std::string& checkpoint, const std::string& method,
                std::size_t index, int target, double eps) {
  EffectiveConfig config;
  start_run(args, config);
  config.add("model", model_kind);
  config.add("method", method);
  config.add("index", static_cast<std::uint64_t>(index));
  config.add("eps", eps);

  Rng run_rng(args.seed);
  Dataset data = load_dataset(args.data, run_rng.split("data").next(), config);
  if (index >= data.size()) {
    throw CLI::ValidationError("--index", "image index out of range");
  }
  auto model = load_model(args, model_kind, checkpoint, data, config);
  std::cout << "effective config:\n" << config.to_string();
  const Tensor& x = data[index].pixels;
  std::size_t cls = target >= 0 ? static_cast<std::size_t>(target)
                                : model->predict(x);

  std::vector<double> heat;
  std::size_t h = 0, w = 0;
  if (method == "lrp" || method == "clrp") {
    auto* net = dynamic_cast<ConvNet*>(model.get());
    if (!net) {
      throw CLI::ValidationError("--method",
                                 method + " explains convnet checkpoints only");
    }
    RelevanceMap map = method == "lrp" ? lrp(*net, x, cls, eps)
                                       : clrp(*net, x, cls, eps);
    heat = map.values;
    h = map.h;
    w = map.w;
  } else if (method == "graattn") {
    auto* net = dynamic_cast<GraCapsNet*>(model.get());
    if (!net) {
      throw CLI::ValidationError("--method",
                                 "graattn explains gracapsnet checkpoints only");
    }
    GraCapsForward f = net->forward(x);
    heat = GraCapsNet::builtin_explanation(f.attentions, cls);
    h = w = net->config().grid();
  } else if (method == "rollout") {
    auto* net = dynamic_cast<VisionTransformer*>(model.get());
    if (!net) {
      throw CLI::ValidationError("--method",
                                 "rollout explains vit checkpoints only");
    }
    VisionTransformer view = net->with_temperature(args.attn_temp);
    heat = attention_rollout(view.forward(x).attention);
    h = net->config().in_h / net->config().patch;
    w = net->config().in_w / net->config().patch;
  } else {
    throw CLI::ValidationError("--method", "unknown method '" + method + "'");
  }

  write_pgm((fs::path(args.out) / (method + ".pgm")).string(), heat, h, w);
  write_csv((fs::path(args.out) / (method + ".csv")).string(), heat, h, w);
  Report report;
  report.notes.push_back("explanation report");
  report.records.push_back({"explained_class", model_kind, method,
                            static_cast<double>(cls), 1});
  report.records.push_back({"heat_mass", model_kind, method,
                            std::accumulate(heat.begin(), heat.end(), 0.0),
                            heat.size()});
  write_text(fs::path(args.out) / "explain_report.txt",
             config.to_string() + report.to_string());
  finish_run(args, "explain", config);
  std::cout << report.to_string();
  return 0;
}

int run_attack(const CommonArgs& args, const std::string& model_kind,
               const std::string& checkpoint, const std::string& method,
               double eps, double alpha, std::size_t steps,
               const std::string& patch_text, std::size_t count) {
  EffectiveConfig config;
  start_run(args, config);
  config.add("model", model_kind);
  config.add("method", method);
  config.add("eps", eps);
  config.add("alpha", alpha);
  config.add("steps", static_cast<std::uint64_t>(steps));

  Rng run_rng(args.seed);
  Dataset data = load_dataset(args.data, run_rng.split("data").next(), config);
  if (count == 0 || count > data.size()) count = data.size();
  auto model = load_model(args, model_kind, checkpoint, data, config);
  std::cout << "effective config:\n" << config.to_string();

  auto* caps = dynamic_cast<CapsuleNetwork*>(model.get());
  if ((method == "caps" || method == "vote") && !caps) {
    throw CLI::ValidationError("--method",
                               method + " targets capsule checkpoints only");
  }
  PatchSpec patch;
  if (method == "patch") {
    patch = parse_patch(patch_text, 7, data[0].pixels.shape());
    config.add("patch", std::to_string(patch.row) + "," +
                            std::to_string(patch.col) + "," +
                            std::to_string(patch.height) + "," +
                            std::to_string(patch.width));
  }

  AttackBudget budget{eps, alpha, steps, false};
  Rng attack_rng = run_rng.split("attack");
  std::size_t correct = 0, flipped = 0;
  bool saved_example = false;
  for (std::size_t i = 0; i < count; ++i) {
    const LabeledImage& item = data[i];
    if (model->predict(item.pixels) != item.label) continue;
    ++correct;
    Tensor adv;
    Rng per_image = attack_rng.split(i);
    if (method == "fgsm") {
      adv = fgsm(*model, item.pixels, item.label, eps);
    } else if (method == "pgd") {
      adv = pgd(*model, item.pixels, item.label, budget, per_image);
    } else if (method == "caps") {
      adv = caps_attack(*caps, item.pixels, item.label, budget, per_image);
    } else if (method == "vote") {
      adv = vote_attack(*caps, item.pixels, item.label, budget, per_image);
    } else if (method == "patch") {
      adv = patch_attack(*model, item.pixels, item.label, patch, steps, alpha);
    } else {
      throw CLI::ValidationError("--method", "unknown method '" + method + "'");
    }
    if (model->predict(adv) != item.label) ++flipped;
    if (!saved_example) {
      std::size_t h = adv.shape()[1], w = adv.shape()[2];
      std::vector<double> first_channel(adv.data().begin(),
                                        adv.data().begin() + h * w);
      write_pgm((fs::path(args.out) / "adv0.pgm").string(), first_channel, h, w);
      write_csv((fs::path(args.out) / "adv0.csv").string(), first_channel, h, w);
      saved_example = true;
    }
  }

  Report report;
  report.notes.push_back("attack report");
  report.notes.push_back(
      "success rate denominator = clean-correct inputs among the first " +
      std::to_string(count));
  report.records.push_back(
      {"attack_success", model_kind, method,
       correct == 0 ? 0.0
                    : static_cast<double>(flipped) / static_cast<double>(correct),
       correct});
  ConstraintStats stats = attack_constraint_stats();
  report.records.push_back({"constraint_checks_passed", model_kind, method,
                            static_cast<double>(stats.passed),
                            stats.performed});
  write_text(fs::path(args.out) / "attack_report.txt",
             config.to_string() + report.to_string());
  finish_run(args, "attack", config);
  std::cout << report.to_string();
  return 0;
}

std::vector<std::pair<std::string, std::string>> parse_nets(
    const std::vector<std::string>& specs) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& spec : specs) {
    auto eq = spec.find('=');
    if (eq == std::string::npos) {
      throw CLI::ValidationError("--net", "expected kind=checkpoint");
    }
    out.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
  }
  return out;
}

int run_bench(const CommonArgs& args, const std::vector<std::string>& nets,
              bool affine, std::size_t patch_size, std::size_t steps) {
  EffectiveConfig config;
  start_run(args, config);
  Rng run_rng(args.seed);
  Dataset data = load_dataset(args.data, run_rng.split("data").next(), config);

  std::vector<std::unique_ptr<Model>> owned;
  std::vector<BenchModel> models;
  for (const auto& [kind, ckpt] : parse_nets(nets)) {
    config.add("net." + kind, ckpt);
    owned.push_back(load_model(args, kind, ckpt, data, config));
    models.push_back({kind, owned.back().get()});
  }
  std::cout << "effective config:\n" << config.to_string();

  Report report;
  std::string name;
  if (affine) {
    report = affine_benchmark(models, data, default_affine_grid(), args.seed);
    name = "affine_report.txt";
  } else {
    PatchBenchOptions opt;
    opt.patch_size = patch_size;
    opt.attack_steps = steps;
    report = patch_benchmark(models, data, opt, args.seed);
    name = "patch_report.txt";
  }
  write_text(fs::path(args.out) / name, config.to_string() + report.to_string());
  finish_run(args, affine ? "bench-affine" : "bench-patch", config);
  std::cout << report.to_string();
  return 0;
}

int run_inspect(const CommonArgs& args, const std::string& model_kind,
                const std::string& checkpoint, int index) {
  EffectiveConfig config;
  start_run(args, config);
  config.add("model", model_kind);
  Rng run_rng(args.seed);
  Dataset data = load_dataset(args.data, run_rng.split("data").next(), config);
  auto model = load_model(args, model_kind, checkpoint, data, config);
  std::cout << "effective config:\n" << config.to_string();

  Report report;
  report.notes.push_back("inspection report");
  report.records.push_back({"param_count", model_kind, "total",
                            static_cast<double>(param_count(*model)), 1});
  for (const auto& [name, tensor] : model->named_parameters()) {
    report.records.push_back({"param_count", model_kind, name,
                              static_cast<double>(tensor.numel()), 1});
  }

  if (index >= 0) {
    std::size_t i = static_cast<std::size_t>(index);
    if (i >= data.size()) {
      throw CLI::ValidationError("--index", "image index out of range");
    }
    if (auto* vit = dynamic_cast<VisionTransformer*>(model.get())) {
      VisionTransformer view = vit->with_temperature(args.attn_temp);
      ViTForward f = view.forward(data[i].pixels);
      for (std::size_t l = 0; l < f.attention.size(); ++l) {
        std::size_t n1 = f.attention[l].shape()[0];
        write_csv((fs::path(args.out) / ("attention_layer" + std::to_string(l) +
                                         ".csv"))
                      .string(),
                  f.attention[l].data(), n1, n1);
      }
    } else if (auto* gra = dynamic_cast<GraCapsNet*>(model.get())) {
      GraCapsForward f = gra->forward(data[i].pixels);
      for (std::size_t l = 0; l < f.attentions.size(); ++l) {
        write_csv((fs::path(args.out) / ("attention_head" + std::to_string(l) +
                                         ".csv"))
                      .string(),
                  f.attentions[l].data(), f.attentions[l].shape()[0],
                  f.attentions[l].shape()[1]);
      }
    }
  }
  write_text(fs::path(args.out) / "inspect_report.txt",
             config.to_string() + report.to_string());
  finish_run(args, "inspect", config);
  std::cout << report.to_string();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale classifier robustness and explanation lab"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, explain_args, attack_args, affine_args,
      patch_args, inspect_args;

  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  std::string train_model_kind = "convnet";
  std::size_t epochs = 10, batch = 32;
  double lr = 0.05;
  add_common(train, train_args);
  train->add_option("--model", train_model_kind,
                    "convnet|capsnet|affcapsnet|gracapsnet|vit");
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--lr", lr, "learning rate");
  train->add_option("--batch", batch, "batch size");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_model_kind = "convnet", eval_ckpt;
  add_common(eval, eval_args);
  eval->add_option("--model", eval_model_kind, "model kind");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")
      ->required()
      ->check(CLI::ExistingFile);

  auto* explain = app.add_subcommand("explain", "write a saliency/attention map");
  std::string explain_model_kind = "convnet", explain_ckpt,
              explain_method = "lrp";
  std::size_t explain_index = 0;
  int explain_target = -1;
  double explain_eps = 1e-6;
  add_common(explain, explain_args);
  explain->add_option("--model", explain_model_kind, "model kind");
  explain->add_option("--checkpoint", explain_ckpt, "checkpoint path")
      ->required()
      ->check(CLI::ExistingFile);
  explain->add_option("--method", explain_method, "lrp|clrp|graattn|rollout");
  explain->add_option("--index", explain_index, "image index");
  explain->add_option("--target", explain_target,
                      "class to explain (default: prediction)");
  explain->add_option("--eps", explain_eps, "lrp epsilon");

  auto* attack = app.add_subcommand("attack", "run an adversarial attack");
  std::string attack_model_kind = "convnet", attack_ckpt,
              attack_method = "pgd", attack_patch;
  double attack_eps = 0.1, attack_alpha = 0.02;
  std::size_t attack_steps = 10, attack_count = 0;
  add_common(attack, attack_args);
  attack->add_option("--model", attack_model_kind, "model kind");
  attack->add_option("--checkpoint", attack_ckpt, "checkpoint path")
      ->required()
      ->check(CLI::ExistingFile);
  attack->add_option("--method", attack_method, "fgsm|pgd|caps|vote|patch");
  attack->add_option("--eps", attack_eps, "l-inf budget");
  attack->add_option("--alpha", attack_alpha, "step size");
  attack->add_option("--steps", attack_steps, "iterations");
  attack->add_option("--patch", attack_patch, "r,c,h,w patch region");
  attack->add_option("--count", attack_count, "number of images (0 = all)");

  auto* bench_affine =
      app.add_subcommand("bench-affine", "affine robustness benchmark");
  std::vector<std::string> affine_nets;
  add_common(bench_affine, affine_args);
  bench_affine->add_option("--net", affine_nets, "kind=checkpoint (repeatable)")
      ->required();

  auto* bench_patch =
      app.add_subcommand("bench-patch", "patch robustness benchmark");
  std::vector<std::string> patch_nets;
  std::size_t bench_patch_size = 7, bench_steps = 100;
  add_common(bench_patch, patch_args);
  bench_patch->add_option("--net", patch_nets, "kind=checkpoint (repeatable)")
      ->required();
  bench_patch->add_option("--patch-size", bench_patch_size, "aligned patch size");
  bench_patch->add_option("--steps", bench_steps, "attack iterations");

  auto* inspect = app.add_subcommand("inspect", "parameter counts and attention dumps");
  std::string inspect_model_kind = "convnet", inspect_ckpt;
  int inspect_index = -1;
  add_common(inspect, inspect_args);
  inspect->add_option("--model", inspect_model_kind, "model kind");
  inspect->add_option("--checkpoint", inspect_ckpt, "checkpoint path")
      ->required()
      ->check(CLI::ExistingFile);
  inspect->add_option("--index", inspect_index,
                      "image whose attention to dump (-1 = none)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\n" << e.what() << "\n";
    return 2;
  }

  try {
    if (train->parsed()) {
      return run_train(train_args, train_model_kind, epochs, lr, batch);
    }
    if (eval->parsed()) {
      return run_eval(eval_args, eval_model_kind, eval_ckpt);
    }
    if (explain->parsed()) {
      return run_explain(explain_args, explain_model_kind, explain_ckpt,
                         explain_method, explain_index, explain_target,
                         explain_eps);
    }
    if (attack->parsed()) {
      return run_attack(attack_args, attack_model_kind, attack_ckpt,
                        attack_method, attack_eps, attack_alpha, attack_steps,
                        attack_patch, attack_count);
    }
    if (bench_affine->parsed()) {
      return run_bench(affine_args, affine_nets, true, 7, 100);
    }
    if (bench_patch->parsed()) {
      return run_bench(patch_args, patch_nets, false, bench_patch_size,
                       bench_steps);
    }
    if (inspect->parsed()) {
      return run_inspect(inspect_args, inspect_model_kind, inspect_ckpt,
                         inspect_index);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
