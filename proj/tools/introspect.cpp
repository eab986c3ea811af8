// Command-line driver: dataset synthesis, stack training, prediction,
// exploration, CAM rendering, evaluation and guidance ablations.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "introspect/introspect.hpp"

namespace {

using namespace introspect;

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonModelArgs {
  std::string model_path;
  ClassifierStack stack;
  void load() { stack = load_model(model_path); }
};

void add_train_knobs(CLI::App* cmd, ExploreConfig& ec, SvmConfig& svm) {
  cmd->add_option("--iterations", ec.iterations, "Tree depth T (default 4)")
      ->check(CLI::Range(1, 8));
  cmd->add_option("--beam-width", ec.beam_width, "Children per expansion (default 1)")
      ->check(CLI::Range(1, 3));
  cmd->add_option("--zoom", ec.zoom, "Child side / parent geometric mean (default 0.7071)")
      ->check(CLI::Range(0.3, 0.9));
  cmd->add_option("--input-side", ec.input_side, "Smaller-side resize target (default 128)");
  cmd->add_option("--min-side", ec.min_side, "Smallest proposable window side (default 8)");
  cmd->add_flag("--square-warp", [&ec](int64_t) { ec.preserve_aspect = false; },
                "Warp windows square instead of preserving aspect");
  cmd->add_option("--lambda", svm.lambda, "SVM regularization (default 1e-4)");
  cmd->add_option("--epochs", svm.epochs, "SVM epochs (default 50)");
}

int run(int argc, char** argv) {
  CLI::App app{"Iterative classification-introspection over image windows"};
  app.require_subcommand(1);

  // --- synth ---
  SynthConfig synth;
  std::string synth_out;
  auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  cmd_synth->add_option("--out", synth_out, "Output directory")->required();
  cmd_synth->add_option("--classes", synth.classes, "Class count (default 2)");
  cmd_synth->add_option("--per-class", synth.images_per_class,
                        "Images per class, split evenly train/test (default 200)");
  cmd_synth->add_option("--side", synth.image_side, "Image side in pixels (default 128)");
  cmd_synth->add_option("--patch-side", synth.patch_side,
                        "Discriminative patch side (default 16)");
  cmd_synth->add_option("--seed", synth.seed, "Generator seed")->required();

  // --- train ---
  std::string train_manifest, train_model, train_policy = "cam";
  TrainOptions topt;
  auto* cmd_train = app.add_subcommand("train", "Train a classifier stack");
  cmd_train->add_option("--dataset", train_manifest, "Manifest JSONL")->required();
  cmd_train->add_option("--model", train_model, "Output model path")->required();
  cmd_train->add_option("--seed", topt.svm.seed, "Training seed")->required();
  cmd_train->add_option("--policy", train_policy,
                        "Guidance policy: cam | saliency | random (default cam)");
  add_train_knobs(cmd_train, topt.explore, topt.svm);

  // --- predict ---
  CommonModelArgs predict_args;
  std::string predict_image;
  auto* cmd_predict = app.add_subcommand("predict", "Classify one image");
  cmd_predict->add_option("--model", predict_args.model_path, "Model path")->required();
  cmd_predict->add_option("--image", predict_image, "PPM/PGM image")->required();

  // --- explore ---
  CommonModelArgs explore_args;
  std::string explore_image, explore_out, explore_dump;
  auto* cmd_explore = app.add_subcommand("explore", "Write the exploration tree");
  cmd_explore->add_option("--model", explore_args.model_path, "Model path")->required();
  cmd_explore->add_option("--image", explore_image, "PPM/PGM image")->required();
  cmd_explore->add_option("--out", explore_out, "Tree JSON path")->required();
  cmd_explore->add_option("--dump-dir", explore_dump,
                          "Also write per-node crops and CAM overlays here");

  // --- render-cam ---
  CommonModelArgs render_args;
  std::string render_image, render_class, render_heat, render_over;
  double render_alpha = 0.5;
  auto* cmd_render = app.add_subcommand("render-cam",
                                        "Render a class activation map");
  cmd_render->add_option("--model", render_args.model_path, "Model path")->required();
  cmd_render->add_option("--image", render_image, "PPM/PGM image")->required();
  cmd_render->add_option("--class", render_class, "Class name or index")->required();
  cmd_render->add_option("--heatmap", render_heat, "Output PGM heatmap");
  cmd_render->add_option("--overlay", render_over, "Output PPM overlay");
  cmd_render->add_option("--alpha", render_alpha, "Overlay blend weight (default 0.5)");

  // --- eval ---
  CommonModelArgs eval_args;
  std::string eval_manifest, eval_out;
  double eval_radius = 16.0;
  std::uint64_t eval_seed = 0;
  auto* cmd_eval = app.add_subcommand("eval", "Evaluate all fusion variants");
  cmd_eval->add_option("--model", eval_args.model_path, "Model path")->required();
  cmd_eval->add_option("--dataset", eval_manifest, "Manifest JSONL")->required();
  cmd_eval->add_option("--out", eval_out, "Report JSON path")->required();
  cmd_eval->add_option("--radius", eval_radius,
                       "Localization hit radius in pixels (default 16)");
  cmd_eval->add_option("--seed", eval_seed, "Seed for randomized controls");

  // --- ablate ---
  std::string abl_manifest, abl_out;
  TrainOptions abl_opt;
  auto* cmd_ablate = app.add_subcommand(
      "ablate", "Train and compare cam / saliency / random / same-classifier");
  cmd_ablate->add_option("--dataset", abl_manifest, "Manifest JSONL")->required();
  cmd_ablate->add_option("--out", abl_out, "Comparative report JSON")->required();
  cmd_ablate->add_option("--seed", abl_opt.svm.seed, "Training seed")->required();
  add_train_knobs(cmd_ablate, abl_opt.explore, abl_opt.svm);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (cmd_synth->parsed()) {
    generate_synthetic(synth, synth_out);
    std::cout << "wrote " << synth.classes * synth.images_per_class
              << " images + manifest to " << synth_out << "\n";
    return 0;
  }

  if (cmd_train->parsed()) {
    topt.explore.policy = guide_policy_from_string(train_policy);
    topt.explore.seed = topt.svm.seed;
    const DatasetManifest manifest = load_manifest(train_manifest);
    const ExtractorSpec extractor = make_filter_bank();
    const ClassifierStack stack = train_stack(manifest, extractor, topt);
    save_model(stack, train_model);
    std::cout << "wrote model " << train_model << " ("
              << stack.per_iteration.size() << " iteration classifiers, "
              << stack.class_names.size() << " classes)\n";
    return 0;
  }

  if (cmd_predict->parsed()) {
    predict_args.load();
    const ClassifierStack& stack = predict_args.stack;
    const Image img = read_ppm(predict_image);
    const ExplorationTree tree =
        explore(img, stack.per_iteration, stack.extractor, stack.config);
    const ScoreVector sv = fuse_early_accum(select_route(tree), stack.early_fusion);
    std::vector<int> order(sv.scores.size());
    for (size_t c = 0; c < order.size(); ++c) order[c] = static_cast<int>(c);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return sv.probabilities[a] > sv.probabilities[b];
    });
    const size_t top = std::min<size_t>(5, order.size());
    for (size_t i = 0; i < top; ++i)
      std::printf("%s %.6f\n", stack.class_names[order[i]].c_str(),
                  sv.probabilities[order[i]]);
    return 0;
  }

  if (cmd_explore->parsed()) {
    explore_args.load();
    const ClassifierStack& stack = explore_args.stack;
    const Image img = read_ppm(explore_image);
    const ExplorationTree tree =
        explore(img, stack.per_iteration, stack.extractor, stack.config);
    detail::atomic_write(explore_out, serialize_tree(tree));
    if (!explore_dump.empty()) {
      std::filesystem::create_directories(explore_dump);
      for (const auto& n : tree.nodes) {
        const Image node_crop = crop(img, n.window);
        char name[64];
        std::snprintf(name, sizeof(name), "node_%03d.ppm", n.id);
        Image rgb = node_crop;
        if (rgb.channels == 1) {
          rgb = Image(node_crop.width, node_crop.height, 3);
          for (int y = 0; y < node_crop.height; ++y)
            for (int x = 0; x < node_crop.width; ++x)
              for (int c = 0; c < 3; ++c) rgb.at(x, y, c) = node_crop.at(x, y, 0);
        }
        write_ppm((std::filesystem::path(explore_dump) / name).string(), rgb);
        if (n.scores.scores.empty()) continue;
        const Image resized = resize_smaller_side(node_crop, stack.config.input_side,
                                                  stack.config.preserve_aspect);
        const FeatureMap fm = extract(stack.extractor, resized);
        ClassActivationMap m = cam_for_class(
            fm, stack.per_iteration[n.depth], n.scores.predicted);
        m.window = Window{0, 0, resized.width - resized.width % fm.stride,
                          resized.height - resized.height % fm.stride};
        std::snprintf(name, sizeof(name), "node_%03d_cam.ppm", n.id);
        write_ppm((std::filesystem::path(explore_dump) / name).string(),
                  render_overlay(m, resized));
      }
    }
    std::cout << "wrote " << explore_out << " (" << tree.nodes.size()
              << " nodes)\n";
    return 0;
  }

  if (cmd_render->parsed()) {
    render_args.load();
    const ClassifierStack& stack = render_args.stack;
    const Image img = read_ppm(render_image);
    int cls = -1;
    for (size_t c = 0; c < stack.class_names.size(); ++c)
      if (stack.class_names[c] == render_class) cls = static_cast<int>(c);
    if (cls < 0) {
      try {
        cls = std::stoi(render_class);
      } catch (...) {
        throw ClassifierError("unknown class \"" + render_class + "\"");
      }
    }
    if (cls < 0 || cls >= static_cast<int>(stack.class_names.size()))
      throw ClassifierError("class index out of range: " + render_class);
    const Image resized = resize_smaller_side(img, stack.config.input_side,
                                              stack.config.preserve_aspect);
    const FeatureMap fm = extract(stack.extractor, resized);
    ClassActivationMap m = cam_for_class(fm, stack.per_iteration[0], cls);
    m.window = Window{0, 0, resized.width - resized.width % fm.stride,
                      resized.height - resized.height % fm.stride};
    if (!render_heat.empty()) write_pgm(render_heat, render_heatmap(m));
    if (!render_over.empty())
      write_ppm(render_over, render_overlay(m, resized, render_alpha));
    return 0;
  }

  if (cmd_eval->parsed()) {
    eval_args.load();
    const ClassifierStack& stack = eval_args.stack;
    const DatasetManifest manifest = load_manifest(eval_manifest);
    EvalOptions opt;
    opt.seed = eval_seed;
    EvalReport report = evaluate(stack, manifest, opt);
    const auto sidecar_path =
        std::filesystem::path(eval_manifest).parent_path() / "groundtruth.jsonl";
    if (std::filesystem::exists(sidecar_path))
      localization_hit_rate(stack, manifest, load_ground_truth(sidecar_path.string()),
                            eval_radius, report);
    detail::atomic_write(eval_out, report_to_json(report).dump(2) + "\n");
    std::cout << report_to_text(report);
    return 0;
  }

  if (cmd_ablate->parsed()) {
    const DatasetManifest manifest = load_manifest(abl_manifest);
    const ExtractorSpec extractor = make_filter_bank();
    abl_opt.explore.seed = abl_opt.svm.seed;
    nlohmann::ordered_json out;
    out["format"] = "introspect-ablation";
    for (const GuidePolicy policy :
         {GuidePolicy::Cam, GuidePolicy::Saliency, GuidePolicy::Random}) {
      TrainOptions o = abl_opt;
      o.explore.policy = policy;
      const ClassifierStack stack = train_stack(manifest, extractor, o);
      EvalOptions eopt;
      eopt.policy = policy;
      eopt.seed = abl_opt.svm.seed;
      eopt.with_consistency = false;
      const EvalReport report = evaluate(stack, manifest, eopt);
      nlohmann::ordered_json acc;
      for (const auto& [v, a] : report.accuracy) acc[v] = a;
      out["policies"][to_string(policy)] = std::move(acc);
      std::cout << "policy " << to_string(policy)
                << ": early-accum=" << report.accuracy.at("early-accum")
                << " baseline=" << report.accuracy.at("baseline")
                << " same-classifier=" << report.accuracy.at("same-classifier")
                << "\n";
    }
    detail::atomic_write(abl_out, out.dump(2) + "\n");
    std::cout << "wrote " << abl_out << "\n";
    return 0;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const introspect::RasterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const introspect::TrainkitError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}
