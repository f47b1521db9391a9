// u2f: command-line front end for the flow/uncertainty toolkit.
//
//   synth      generate a synthetic dataset on disk
//   train      train the joint flow/uncertainty model from a config file
//   eval       score a checkpoint on a dataset, write CSV + plot data
//   fuse-train train the bidirectional fusion refinement net
//   fuse-eval  compare unfused / uncertainty-fused / occlusion-fused flow
//   sparsify   sparsification curve + AUSE for one prediction
//   viz        render a .flo file as a color-wheel PNG

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "u2flow/flow_color.hpp"
#include "u2flow/train.hpp"

namespace {

using namespace u2flow;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << text;
}

std::vector<SynthSample> dataset_for_train(const ConfigFile& cf) {
  const std::string dir = cf.get_string("train", "data_dir", "");
  if (!dir.empty()) return import_dataset(dir);
  const SynthConfig sc = synth_config_from(cf);
  const int count = cf.get_int("synth", "count", 16);
  const auto seed = static_cast<uint64_t>(cf.get_int("synth", "seed", 1));
  const bool linear = cf.get_bool("synth", "linear", false);
  logf(1, "generating %d synthetic samples (seed %llu)", count,
       static_cast<unsigned long long>(seed));
  return generate_dataset(seed, count, sc, linear);
}

std::string fusion_row_csv(const std::string& label, const FusionEvalRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g", label.c_str(),
                r.epe_all, r.epe_occ, r.epe_noc, r.fl_all);
  return buf;
}

int run(int argc, char** argv) {
  CLI::App app{"joint optical-flow and uncertainty estimation toolkit"};
  app.require_subcommand(1);

  // ---- synth ----
  uint64_t sy_seed = 1;
  std::string sy_out;
  int sy_count = 16;
  SynthConfig sy_cfg;
  bool sy_linear = false;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--seed", sy_seed, "master seed");
  synth->add_option("--out", sy_out, "output directory")->required();
  synth->add_option("--count", sy_count, "number of samples");
  synth->add_option("--size", sy_cfg.size, "square frame size");
  synth->add_option("--channels", sy_cfg.channels, "1 or 3");
  synth->add_flag("--linear", sy_linear,
                  "constant-velocity triples (for fusion work)");
  synth->add_flag("--corrupt", sy_cfg.corrupt_next,
                  "photometrically corrupt the second frame");
  synth->add_option("--corrupt-strength", sy_cfg.corrupt_strength,
                    "corruption intensity in [0,1]");
  synth->add_option("--noise", sy_cfg.noise_sigma, "additive noise sigma");
  synth->callback([&] {
    const auto data = generate_dataset(sy_seed, sy_count, sy_cfg, sy_linear);
    export_dataset(sy_out, data);
    std::printf("wrote %zu samples to %s\n", data.size(), sy_out.c_str());
  });

  // ---- train ----
  std::string tr_config, tr_out;
  auto* train_cmd = app.add_subcommand("train", "train the model");
  train_cmd->add_option("--config", tr_config, "config file")->required();
  train_cmd->add_option("--out", tr_out, "output directory")->required();
  train_cmd->callback([&] {
    const ConfigFile cf = ConfigFile::load(tr_config);
    TrainConfig tc = train_config_from(cf);
    tc.out_dir = tr_out;
    std::filesystem::create_directories(tr_out);
    const auto data = dataset_for_train(cf);

    ParamStore params;
    const std::string init = cf.get_string("train", "init_ckpt", "");
    if (!init.empty()) {
      auto [p, cfg] = load_model_checkpoint(init);
      params = std::move(p);
      tc.model = cfg;  // a warm start keeps the checkpoint's architecture
      logf(1, "warm start from %s", init.c_str());
    } else {
      params = init_model_params(tc.model, tc.seed);
    }

    const RunLog log = train(tc, data, &params);
    write_text(tr_out + "/train_log.csv", log.to_csv());
    std::printf("trained %d steps; checkpoint %s/final.ckpt, log %s\n",
                tc.steps, tr_out.c_str(), (tr_out + "/train_log.csv").c_str());
  });

  // ---- eval ----
  std::string ev_ckpt, ev_data, ev_report, ev_plot, ev_dump;
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint");
  eval_cmd->add_option("--ckpt", ev_ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--data", ev_data, "dataset directory")->required();
  eval_cmd->add_option("--report", ev_report, "CSV output path")->required();
  eval_cmd->add_option("--plot", ev_plot,
                       "pooled sparsification plot-data output");
  eval_cmd->add_option("--dump", ev_dump,
                       "directory for per-frame pred_/unc_ .flo files");
  eval_cmd->callback([&] {
    const auto [params, cfg] = load_model_checkpoint(ev_ckpt);
    const auto data = import_dataset(ev_data);
    SparsificationResult pooled;
    std::vector<InferenceResult> preds;
    const DatasetEval ev =
        evaluate(params, cfg, data, ev_plot.empty() ? nullptr : &pooled,
                 ev_dump.empty() ? nullptr : &preds);
    if (!ev_dump.empty()) {
      std::filesystem::create_directories(ev_dump);
      for (size_t i = 0; i < preds.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "/pred_%04zu.flo", i);
        write_flo(ev_dump + name, preds[i].flow);
        std::snprintf(name, sizeof(name), "/unc_%04zu.flo", i);
        write_flo_scalar(ev_dump + name, preds[i].variance);
      }
    }

    std::string csv = eval_csv_header() + ",epe_occ,epe_noc\n";
    auto append = [&](const std::string& label, const SampleEval& f) {
      char tail[64];
      std::snprintf(tail, sizeof(tail), ",%.9g,%.9g", f.epe_occ, f.epe_noc);
      csv += eval_csv_row(label, f.report) + tail + "\n";
    };
    for (size_t i = 0; i < ev.frames.size(); ++i) {
      char label[32];
      std::snprintf(label, sizeof(label), "frame_%04zu", i);
      append(label, ev.frames[i]);
    }
    append("aggregate", ev.aggregate);
    write_text(ev_report, csv);
    if (!ev_plot.empty())
      write_text(ev_plot, sparsification_plot_csv(pooled));

    const auto& a = ev.aggregate.report;
    std::printf("frames %zu  epe %.4f  fl %.2f%%  ause %.4f  cc %s\n",
                ev.frames.size(), a.epe, a.fl_all, a.ause,
                a.spearman_cc ? std::to_string(*a.spearman_cc).c_str()
                              : "absent");
  });

  // ---- fuse-train ----
  std::string ft_ckpt, ft_data, ft_out;
  float ft_theta = 8.0f;
  FusionTrainOptions ft_opt;
  FusionNetConfig ft_cfg;
  uint64_t ft_seed = 1;
  auto* ft = app.add_subcommand("fuse-train", "train the fusion net");
  ft->add_option("--ckpt", ft_ckpt, "model checkpoint")->required();
  ft->add_option("--data", ft_data, "triple dataset directory")->required();
  ft->add_option("--out", ft_out, "output directory")->required();
  ft->add_option("--theta", ft_theta, "forward-variance reliability bound");
  ft->add_option("--steps", ft_opt.steps, "optimizer steps");
  ft->add_option("--lr", ft_opt.lr, "peak learning rate");
  ft->add_option("--width", ft_cfg.width, "fusion net channel width");
  ft->add_option("--seed", ft_seed, "init seed");
  ft->callback([&] {
    const auto [mp, mcfg] = load_model_checkpoint(ft_ckpt);
    const auto data = import_dataset(ft_data);
    std::vector<FusionSample> samples;
    for (const auto& s : data)
      samples.push_back(make_fusion_sample(mp, mcfg, s.img_prev, s.img_cur,
                                           s.img_next, ft_theta));
    ft_cfg.image_channels = data.front().img_cur.channels;
    ParamStore fp = init_fusion_params(ft_cfg, ft_seed);
    const FusionTrainStats st = train_fusion_net(&fp, samples, ft_opt);
    std::filesystem::create_directories(ft_out);
    save_fusion_checkpoint(ft_out + "/fusion.ckpt", fp, ft_cfg);
    std::printf(
        "fusion net: %d steps (%d skipped), loss %.5f -> %.5f, saved %s\n",
        st.steps_run, st.skipped, st.first_loss, st.final_loss,
        (ft_out + "/fusion.ckpt").c_str());
  });

  // ---- fuse-eval ----
  std::string fe_ckpt, fe_fusion, fe_data, fe_report;
  float fe_theta = 8.0f;
  auto* fe = app.add_subcommand("fuse-eval", "ablate bidirectional fusion");
  fe->add_option("--ckpt", fe_ckpt, "model checkpoint")->required();
  fe->add_option("--fusion-ckpt", fe_fusion, "fusion checkpoint")->required();
  fe->add_option("--data", fe_data, "triple dataset directory")->required();
  fe->add_option("--theta", fe_theta, "forward-variance reliability bound")
      ->required();
  fe->add_option("--report", fe_report, "optional CSV output path");
  fe->callback([&] {
    const auto [mp, mcfg] = load_model_checkpoint(fe_ckpt);
    const auto [fp, fcfg] = load_fusion_checkpoint(fe_fusion);
    const auto data = import_dataset(fe_data);
    const FusionEvalReport rep = run_fusion_eval(mp, mcfg, fp, data, fe_theta);
    std::string csv = "variant,epe_all,epe_occ,epe_noc,fl_all\n";
    csv += fusion_row_csv("unfused", rep.unfused) + "\n";
    csv += fusion_row_csv("fused_uncertainty", rep.fused_uncertainty) + "\n";
    csv += fusion_row_csv("fused_occlusion", rep.fused_occlusion) + "\n";
    std::fputs(csv.c_str(), stdout);
    if (!fe_report.empty()) write_text(fe_report, csv);
  });

  // ---- sparsify ----
  std::string sp_pred, sp_unc, sp_gt, sp_plot;
  auto* sp = app.add_subcommand("sparsify",
                                "sparsification curve for one prediction");
  sp->add_option("--pred", sp_pred, "predicted flow (.flo)")->required();
  sp->add_option("--unc", sp_unc, "uncertainty raster (1-channel .flo)")
      ->required();
  sp->add_option("--gt", sp_gt, "ground-truth flow (.flo)")->required();
  sp->add_option("--plot", sp_plot, "plot-data output path")->required();
  sp->callback([&] {
    const FlowField pred = read_flo(sp_pred);
    const FlowField gt = read_flo(sp_gt);
    const ScalarMap unc = read_flo_scalar(sp_unc);
    const MaskImage valid = detail::valid_mask_of(gt);
    long n = 0;
    for (uint8_t v : valid.data) n += v;
    if (n < 50)
      logf(0, "only %ld valid pixels; the 2%%-step curve is unreliable", n);
    const ScalarMap em = epe_map(pred, gt);
    const SparsificationResult s = sparsification(em, unc, valid);
    write_text(sp_plot, sparsification_plot_csv(s));
    const auto cc = spearman_cc(unc, em, valid);
    std::printf("ause %.6f  spearman_cc %s%s\n", ause(s),
                cc ? std::to_string(*cc).c_str() : "absent",
                s.degenerate ? "  (degenerate: zero error everywhere)" : "");
  });

  // ---- viz ----
  std::string vz_flow, vz_out;
  double vz_max = 0.0;
  auto* vz = app.add_subcommand("viz", "render flow as a color-wheel PNG");
  vz->add_option("--flow", vz_flow, "input .flo")->required();
  vz->add_option("--out", vz_out, "output .png")->required();
  vz->add_option("--max", vz_max, "magnitude mapped to full saturation "
                                  "(0 = auto)");
  vz->callback([&] {
    write_png8(vz_out, flow_to_color(read_flo(vz_flow), vz_max));
    std::printf("wrote %s\n", vz_out.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
