#include "isoprune/cli.hpp"

#include <filesystem>
#include <sstream>

#include "CLI11.hpp"
#include "isoprune/dep_graph.hpp"
#include "isoprune/executor.hpp"
#include "isoprune/importance.hpp"
#include "isoprune/isomorph.hpp"
#include "isoprune/model_ir.hpp"
#include "isoprune/pruner.hpp"
#include "isoprune/report.hpp"
#include "json.hpp"

namespace isoprune {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Analysis {
  ModelBundle bundle;
  SubStructurePartition part;
  std::vector<IsoGroup> groups;
};

ModelBundle load_with_grads(const std::string& dir, const std::string& grads) {
  ModelBundle b = load_bundle(dir);
  if (!grads.empty()) {
    b.gradients = load_tensor_store(fs::path(grads) / "grads.json", fs::path(grads) / "grads.bin");
    validate_bundle(b);
  }
  return b;
}

Analysis analyse(const std::string& dir, const std::string& grads) {
  Analysis a;
  a.bundle = load_with_grads(dir, grads);
  a.part = identify_substructures(a.bundle.graph);
  a.groups = cluster_isomorphic(a.part.subs, a.bundle.graph);
  return a;
}

Criterion parse_criterion(const std::string& s) {
  auto k = criterion_from_string(s);
  if (!k) throw Error(ErrorKind::usage, "unknown criterion '" + s + "'");
  return {*k};
}

std::map<std::string, double> load_group_ratios(const std::string& path) {
  std::map<std::string, double> out;
  if (path.empty()) return out;
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, path + ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::format, path + ": expected an object of group -> ratio");
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) throw Error(ErrorKind::format, path + ": ratio for '" + k + "' is not a number");
    out[k] = v.get<double>();
  }
  return out;
}

void write_manifest(const fs::path& dir, RunManifest m, const std::string& bundle_dir) {
  m.input_bundle_sha256 = bundle_content_hash(bundle_dir);
  write_file(dir / "run_manifest.json", manifest_to_json_text(m));
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create '" + dir.string() + "': " + ec.message());
}

std::vector<std::int64_t> to_indices(const Tensor& t) {
  std::vector<std::int64_t> out;
  for (float v : t.data) {
    if (v != static_cast<float>(static_cast<std::int64_t>(v))) {
      throw Error(ErrorKind::format, "target tensor '" + t.name + "' holds a non-integer value");
    }
    out.push_back(static_cast<std::int64_t>(v));
  }
  return out;
}

ActivationBatch batch_from(const Tensor& t, const Shape& sample) {
  const std::int64_t per = shape_numel(sample);
  if (t.numel() % per != 0) {
    throw Error(ErrorKind::usage, "'" + t.name + "' holds " + std::to_string(t.numel()) +
                                      " values, not a multiple of sample shape " + shape_str(sample));
  }
  return make_batch(sample, t.numel() / per, std::vector<double>(t.data.begin(), t.data.end()));
}

const Shape& input_shape(const ModelBundle& b) {
  if (b.graph.inputs.size() != 1) throw Error(ErrorKind::usage, "expected a graph with one input");
  return b.graph.at(b.graph.inputs.front()).params.shape;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structured pruning by isomorphic sub-structure ranking", "isoprune"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  std::string bundle_dir, bundle_b, grads_dir, out_path, criterion_name = "l2", strategy_name = "isomorphic";
  std::string group_ratio_file, inputs_file, data_dir;
  double ratio = 0.0, eps = 1e-4;
  std::size_t bins = 20, depth = 0;
  std::int64_t min_keep = 1;
  bool as_json = false, plan_only = false, prevent_collapse = false;

  auto* inspect = app.add_subcommand("inspect", "Summarize a bundle");
  inspect->add_option("bundle", bundle_dir)->required();

  auto* subs_cmd = app.add_subcommand("substructures", "List minimal removable sub-structures");
  subs_cmd->add_option("bundle", bundle_dir)->required();
  subs_cmd->add_flag("--json", as_json);

  auto* groups_cmd = app.add_subcommand("groups", "List isomorphic groups");
  groups_cmd->add_option("bundle", bundle_dir)->required();
  groups_cmd->add_flag("--json", as_json);

  auto* score = app.add_subcommand("score", "Importance scores per group");
  score->add_option("bundle", bundle_dir)->required();
  score->add_option("--criterion", criterion_name);
  score->add_option("--grads", grads_dir);
  score->add_flag("--json", as_json);

  auto* prune = app.add_subcommand("prune", "Prune a bundle");
  prune->add_option("bundle", bundle_dir)->required();
  prune->add_option("-o,--out", out_path)->required();
  prune->add_option("--strategy", strategy_name);
  prune->add_option("--ratio", ratio);
  prune->add_option("--group-ratios", group_ratio_file);
  prune->add_option("--criterion", criterion_name);
  prune->add_option("--grads", grads_dir);
  prune->add_option("--depth", depth);
  prune->add_option("--min-keep", min_keep);
  prune->add_flag("--prevent-collapse", prevent_collapse);
  prune->add_flag("--plan-only", plan_only);

  auto* verify = app.add_subcommand("verify", "Compare the outputs of two bundles");
  verify->add_option("bundle_a", bundle_dir)->required();
  verify->add_option("bundle_b", bundle_b)->required();
  verify->add_option("--inputs", inputs_file)->required();

  auto* fdgrad = app.add_subcommand("fdgrad", "Finite-difference gradients");
  fdgrad->add_option("bundle", bundle_dir)->required();
  fdgrad->add_option("--data", data_dir)->required();
  fdgrad->add_option("--eps", eps);
  fdgrad->add_option("-o,--out", out_path)->required();

  auto* report = app.add_subcommand("report", "Histogram and group statistics");
  report->add_option("bundle", bundle_dir)->required();
  report->add_option("--criterion", criterion_name);
  report->add_option("--grads", grads_dir);
  report->add_option("--bins", bins);
  report->add_option("--ratio", ratio);
  report->add_option("--strategy", strategy_name, "Also plan with this strategy and list removals");
  report->add_option("-o,--out", out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*inspect) {
      const ModelBundle b = load_bundle(bundle_dir);
      const auto shapes = infer_shapes(b.graph);
      std::int64_t params = 0;
      for (const Tensor& t : b.weights.tensors()) params += t.numel();
      out << "nodes " << b.graph.nodes.size() << "\n";
      out << "tensors " << b.weights.size() << "\n";
      out << "parameters " << params << "\n";
      out << "gradients " << (b.gradients ? "yes" : "no") << "\n";
      for (std::size_t i : canonical_order(b.graph)) {
        const NodeSpec& n = b.graph.nodes[i];
        out << n.id << " " << to_string(n.kind) << " " << shape_str(shapes[i]) << "\n";
      }
      return 0;
    }

    if (*subs_cmd) {
      const Analysis a = analyse(bundle_dir, "");
      if (as_json) {
        json subs = json::array();
        for (const SubStructure& s : a.part.subs) {
          json vs = json::array();
          for (const PruningVertex& v : s.vertices) vs.push_back(describe(v));
          subs.push_back({{"family", to_string(s.family)}, {"vertices", vs}, {"edges", s.edges}});
        }
        json prot = json::array();
        for (const PruningVertex& v : a.part.protected_vertices) prot.push_back(describe(v));
        out << json{{"substructures", subs}, {"protected", prot}}.dump(2) << "\n";
      } else {
        for (std::size_t i = 0; i < a.part.subs.size(); ++i) {
          const SubStructure& s = a.part.subs[i];
          out << i << " " << to_string(s.family) << " vertices=" << s.vertex_count() << " edges=" << s.edge_count()
              << " params=" << parameter_count(a.bundle.graph, s) << " root=" << describe(s.vertices.front()) << "\n";
        }
      }
      return 0;
    }

    if (*groups_cmd) {
      const Analysis a = analyse(bundle_dir, "");
      if (as_json) {
        json gs = json::array();
        for (const IsoGroup& g : a.groups) {
          gs.push_back({{"signature", g.signature.hash()},
                        {"signature_text", g.signature.text()},
                        {"family", to_string(g.family)},
                        {"members", g.members},
                        {"vertices_per_member", g.stats.vertices_per_member},
                        {"params_per_member", g.stats.params_per_member}});
        }
        out << gs.dump(2) << "\n";
      } else {
        for (const IsoGroup& g : a.groups) {
          out << g.signature.hash() << " " << to_string(g.family) << " members=" << g.stats.member_count
              << " vertices=" << g.stats.vertices_per_member << " edges=" << g.signature.edge_count
              << " params=" << g.stats.params_per_member << "\n";
        }
      }
      return 0;
    }

    if (*score) {
      const Analysis a = analyse(bundle_dir, grads_dir);
      const Criterion c = parse_criterion(criterion_name);
      const auto scores = score_all(a.groups, a.part.subs, c, a.bundle);
      if (as_json) {
        json gs = json::array();
        for (std::size_t g = 0; g < a.groups.size(); ++g) {
          gs.push_back({{"signature", a.groups[g].signature.hash()},
                        {"family", to_string(a.groups[g].family)},
                        {"members", a.groups[g].members},
                        {"scores", scores[g].scores}});
        }
        out << json{{"criterion", to_string(c.kind)}, {"groups", gs}}.dump(2) << "\n";
      } else {
        for (std::size_t g = 0; g < a.groups.size(); ++g) {
          const auto& s = scores[g].scores;
          double lo = s.front(), hi = s.front();
          CompensatedSum acc;
          for (double x : s) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
            acc.add(x);
          }
          out << a.groups[g].signature.hash() << " " << to_string(a.groups[g].family) << " n=" << s.size()
              << " min=" << format_double(lo) << " max=" << format_double(hi)
              << " mean=" << format_double(acc.value() / static_cast<double>(s.size())) << "\n";
        }
      }
      return 0;
    }

    if (*prune) {
      const Analysis a = analyse(bundle_dir, grads_dir);
      PruneConfig cfg;
      const auto strategy = strategy_from_string(strategy_name);
      if (!strategy) throw Error(ErrorKind::usage, "unknown strategy '" + strategy_name + "'");
      cfg.strategy = *strategy;
      cfg.default_ratio = ratio;
      cfg.per_group_ratios = load_group_ratios(group_ratio_file);
      cfg.criterion = parse_criterion(criterion_name);
      cfg.min_keep = min_keep;
      cfg.prevent_collapse = prevent_collapse;
      const auto scores = score_all(a.groups, a.part.subs, cfg.criterion, a.bundle);
      PruningPlan plan = plan_prune(a.bundle, a.part.subs, a.groups, scores, cfg);
      if (depth > 0) {
        const auto per_sub = scores_by_substructure(a.groups, scores, a.part.subs.size());
        plan.removed_blocks = depth_prune_plan(a.bundle.graph, a.part.subs, per_sub, depth).removed_blocks;
      }
      const fs::path dir(out_path);
      ensure_dir(dir);
      RunManifest m;
      m.command = "prune";
      m.config = {{"strategy", strategy_name},
                  {"ratio", format_double(ratio)},
                  {"group_ratios", group_ratio_file},
                  {"criterion", to_string(cfg.criterion.kind)},
                  {"depth", std::to_string(depth)},
                  {"min_keep", std::to_string(min_keep)},
                  {"prevent_collapse", prevent_collapse ? "true" : "false"},
                  {"plan_only", plan_only ? "true" : "false"}};
      m.inputs = {bundle_dir};
      if (!grads_dir.empty()) m.inputs.push_back(grads_dir);
      write_file(dir / "plan.json", plan_to_json_text(plan, a.bundle.graph, a.groups));
      m.outputs = {(dir / "plan.json").string()};
      if (!plan_only) {
        const ModelBundle pruned = apply_plan(a.bundle, plan);
        save_bundle(pruned, dir);
        m.outputs.push_back(dir.string());
      }
      write_manifest(dir, m, bundle_dir);
      out << "removed " << plan.removals.size() << " sub-structures and " << plan.removed_blocks.size()
          << " blocks\n";
      return 0;
    }

    if (*verify) {
      const ModelBundle a = load_bundle(bundle_dir);
      const ModelBundle b = load_bundle(bundle_b);
      const Shape& sample = input_shape(a);
      const auto bytes = read_binary(inputs_file);
      if (bytes.size() % 4 != 0) throw Error(ErrorKind::format, inputs_file + ": size is not a multiple of 4");
      const TensorRecord rec{"inputs", {static_cast<std::int64_t>(bytes.size() / 4)}, 0, bytes.size()};
      const TensorStore st = TensorStore::from_parts({rec}, bytes);
      const ActivationBatch batch = batch_from(st.at("inputs"), sample);
      const ComparisonReport r = compare_outputs(a, b, std::span(&batch, 1));
      out << comparison_to_json_text(r);
      return 0;
    }

    if (*fdgrad) {
      const ModelBundle b = load_bundle(bundle_dir);
      const Shape& sample = input_shape(b);
      const TensorStore data = load_tensor_store(fs::path(data_dir) / "tensors.json", fs::path(data_dir) / "tensors.bin");
      std::vector<DataBatch> batches;
      for (std::size_t i = 0;; ++i) {
        const Tensor* x = data.find("batch" + std::to_string(i) + ".input");
        const Tensor* y = data.find("batch" + std::to_string(i) + ".target");
        if (!x && !y) break;
        if (!x || !y) throw Error(ErrorKind::format, "batch " + std::to_string(i) + " lacks its input or target");
        batches.push_back({batch_from(*x, sample), to_indices(*y)});
      }
      if (batches.empty()) throw Error(ErrorKind::format, data_dir + ": no batch0.input / batch0.target records");
      const TensorStore grads = fd_gradients(b, batches, eps);
      const fs::path dir(out_path);
      ensure_dir(dir);
      save_tensor_store(grads, dir / "grads.json", dir / "grads.bin");
      RunManifest m;
      m.command = "fdgrad";
      m.config = {{"eps", format_double(eps)}, {"batches", std::to_string(batches.size())}};
      m.inputs = {bundle_dir, data_dir};
      m.outputs = {(dir / "grads.json").string(), (dir / "grads.bin").string()};
      write_manifest(dir, m, bundle_dir);
      return 0;
    }

    if (*report) {
      const Analysis a = analyse(bundle_dir, grads_dir);
      ReportInputs in;
      in.bundle = &a.bundle;
      in.subs = &a.part.subs;
      in.groups = &a.groups;
      in.criterion = parse_criterion(criterion_name);
      in.bins = bins;
      in.ratio = ratio > 0.0 ? ratio : 0.5;
      const auto scores = score_all(a.groups, a.part.subs, in.criterion, a.bundle);
      in.scores = &scores;
      PruningPlan plan;
      if (report->count("--strategy")) {
        PruneConfig cfg;
        const auto strategy = strategy_from_string(strategy_name);
        if (!strategy) throw Error(ErrorKind::usage, "unknown strategy '" + strategy_name + "'");
        cfg.strategy = *strategy;
        cfg.default_ratio = in.ratio;
        cfg.criterion = in.criterion;
        plan.removals = select_removals(a.bundle, a.part.subs, a.groups, scores, cfg);
        in.plan = &plan;
      }
      RunManifest m;
      m.command = "report";
      m.config = {{"criterion", to_string(in.criterion.kind)},
                  {"bins", std::to_string(bins)},
                  {"ratio", format_double(in.ratio)},
                  {"strategy", in.plan ? strategy_name : ""}};
      m.inputs = {bundle_dir};
      if (!grads_dir.empty()) m.inputs.push_back(grads_dir);
      const fs::path target(out_path);
      if (target.extension() == ".csv") {
        if (target.has_parent_path()) ensure_dir(target.parent_path());
        write_file(target, histogram_csv(histogram(a.groups, scores, bins, in.ratio)));
        m.outputs = {target.string()};
        const std::string manifest_path = target.string() + ".run_manifest.json";
        m.input_bundle_sha256 = bundle_content_hash(bundle_dir);
        write_file(manifest_path, manifest_to_json_text(m));
      } else {
        emit_report(in, target);
        m.outputs = {(target / "report.json").string(), (target / "histogram.csv").string(),
                     (target / "groupstats.csv").string()};
        write_manifest(target, m, bundle_dir);
      }
      return 0;
    }
  } catch (const Error& e) {
    err << "isoprune: " << e.what() << "\n";
    return e.kind() == ErrorKind::usage ? 2 : 1;
  } catch (const std::exception& e) {
    err << "isoprune: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace isoprune
