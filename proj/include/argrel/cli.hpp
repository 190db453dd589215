// Command-line front end. run_cli() is the whole program; tools/argrel.cpp
// only forwards argv to it so tests can drive commands in-process.
#pragma once

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "argrel/annotate.hpp"
#include "argrel/pretrain.hpp"

namespace argrel {

// Per marker: propositions containing it that are a relation head, a
// relation tail, or in no relation. A proposition that is both head and tail
// counts once on each side.
struct MarkerCounts {
  long head = 0;
  long tail = 0;
  long other = 0;
  bool operator==(const MarkerCounts&) const = default;
};

inline std::vector<std::pair<std::string, MarkerCounts>> marker_breakdown(
    const Corpus& corpus, const std::vector<Marker>& markers = default_markers()) {
  std::map<std::string, MarkerCounts> counts;
  for (const auto& m : markers) counts[m.text];
  for (const auto& d : corpus.documents) {
    std::set<int> heads, tails;
    for (const auto& r : d.relations) {
      heads.insert(r.head);
      tails.insert(r.tail);
    }
    for (const auto& p : d.propositions)
      for (const auto& m : match_markers(p.text, markers)) {
        auto& c = counts[m];
        const bool h = heads.count(p.id) > 0, t = tails.count(p.id) > 0;
        if (h) ++c.head;
        if (t) ++c.tail;
        if (!h && !t) ++c.other;
      }
  }
  std::vector<std::pair<std::string, MarkerCounts>> out;
  for (const auto& m : markers) out.emplace_back(m.text, counts[m.text]);
  return out;
}

namespace cli_detail {

namespace fs = std::filesystem;

inline std::string file_digest(const std::string& path) { return sha256_hex(read_file(path)); }

// Output directory of one command plus the digests recorded in its manifest.
struct RunDir {
  fs::path dir;

  std::string path(const std::string& name) const { return (dir / name).string(); }

  void write(const std::string& name, const std::string& content) const {
    fs::create_directories((dir / name).parent_path());
    write_file(path(name), content);
  }

  nlohmann::ordered_json output_digests() const {
    std::vector<std::string> names;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file()) {
        const auto rel = fs::relative(e.path(), dir).generic_string();
        if (rel != "manifest.json") names.push_back(rel);
      }
    std::sort(names.begin(), names.end());
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& n : names) j[n] = file_digest(path(n));
    return j;
  }
};

inline std::string local_stamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

inline RunDir make_run_dir(const std::string& explicit_dir, const std::string& tag) {
  if (!explicit_dir.empty()) {
    fs::create_directories(explicit_dir);
    return {explicit_dir};
  }
  const fs::path base = fs::path("runs") / (local_stamp() + "-" + tag);
  fs::path dir = base;
  for (int k = 2; fs::exists(dir); ++k) dir = base.string() + "-" + std::to_string(k);
  fs::create_directories(dir);
  return {dir};
}

inline std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

struct WindowOpts {
  int L = 20;
  std::string mode = "head_given";
  int max_tokens = 512;

  void add(CLI::App* app) {
    app->add_option("-L,--window-size", L, "Window size L")->capture_default_str();
    app->add_option("--mode", mode, "head_given or end_to_end")->capture_default_str();
    app->add_option("--max-tokens", max_tokens, "Token budget per window")->capture_default_str();
  }
  WindowConfig resolve() const {
    WindowConfig w;
    w.L = L;
    w.mode = window_mode_from_string(mode);
    w.max_tokens = max_tokens;
    w.check();
    return w;
  }
};

struct TrainOpts {
  TrainConfig t;
  std::string schedule = "constant";

  TrainOpts() {
    t.encoder.dim = 32;
    t.encoder.layers = 1;
    t.encoder.max_positions = 256;
    t.epochs = 10;
    t.warmup = 0;
  }
  void add(CLI::App* app) {
    app->add_option("--epochs", t.epochs)->capture_default_str();
    app->add_option("--lr", t.lr)->capture_default_str();
    app->add_option("--warmup", t.warmup)->capture_default_str();
    app->add_option("--schedule", schedule, "constant or linear")->capture_default_str();
    app->add_option("--batch-size", t.batch_size)->capture_default_str();
    app->add_option("--max-steps", t.max_steps)->capture_default_str();
    app->add_option("--min-count", t.min_count)->capture_default_str();
    app->add_flag("--class-weighting", t.class_weighting);
    app->add_option("--dim", t.encoder.dim)->capture_default_str();
    app->add_option("--layers", t.encoder.layers)->capture_default_str();
    app->add_option("--heads", t.encoder.heads)->capture_default_str();
    app->add_option("--ffn-mult", t.encoder.ffn_mult)->capture_default_str();
    app->add_option("--dropout", t.encoder.dropout_p)->capture_default_str();
    app->add_option("--max-positions", t.encoder.max_positions)->capture_default_str();
    app->add_option("--hidden", t.hidden, "Relation head width (0 = dim)")->capture_default_str();
  }
  TrainConfig resolve(std::uint64_t seed) const {
    TrainConfig c = t;
    c.schedule = schedule_from_string(schedule);
    c.seed = derive_seed(seed, "train");
    c.encoder.seed = derive_seed(seed, "encoder-init");
    c.check();
    return c;
  }
};

struct ALOpts {
  std::string pool, test, warm_start, labeling = "pairwise", state, oracle = "simulated";
  std::string host = "127.0.0.1", annotation_dir, static_dir;
  int T = 10, b = -1, mc_passes = 10, port = 8080, overlap_k = 2;
  bool overlap = false;
  double label_timeout = 86400;

  void add(CLI::App* app, std::vector<std::string*>& inputs, bool with_oracle) {
    app->add_option("--pool", pool, "Unlabeled pool corpus (gold used by the simulated oracle)")->required();
    app->add_option("--test", test, "Test corpus")->required();
    app->add_option("-T,--iterations", T)->capture_default_str();
    app->add_option("-b,--budget", b, "Propositions per iteration (-1: 10% of the pool)")->capture_default_str();
    app->add_option("--warm-start", warm_start, "Checkpoint to fine-tune from each iteration");
    app->add_option("--labeling-unit", labeling, "pairwise or incident")->capture_default_str();
    app->add_option("--mc-passes", mc_passes)->capture_default_str();
    inputs.insert(inputs.end(), {&pool, &test, &warm_start});
    if (!with_oracle) return;
    app->add_option("--oracle", oracle, "simulated or external")->capture_default_str();
    app->add_option("--state", state, "Resumable loop state file");
    app->add_option("--host", host)->capture_default_str();
    app->add_option("--port", port)->capture_default_str();
    app->add_option("--annotation-dir", annotation_dir, "Labeled-store directory");
    app->add_option("--static-dir", static_dir, "Annotator UI assets to serve at /");
    app->add_flag("--overlap", overlap, "Collect several submissions per task for agreement");
    app->add_option("--overlap-k", overlap_k)->capture_default_str();
    app->add_option("--label-timeout", label_timeout, "Seconds to wait for a batch of labels")->capture_default_str();
  }
};

inline void write_metrics_csv(const RunDir& run, const std::string& name, const std::vector<TableRow>& rows) {
  std::ostringstream os;
  write_table_header(os);
  for (const auto& r : rows) write_table_row(os, r);
  run.write(name, os.str());
}

inline std::string predictions_jsonl(const PredictionSet& ps) {
  std::string out;
  for (const auto& p : ps.pairs) {
    nlohmann::ordered_json j = {{"doc_id", p.doc_id}, {"head", p.head}, {"tail", p.tail},
                                {"predicted", to_string(p.predicted)}};
    out += j.dump() + '\n';
  }
  return out;
}

}  // namespace cli_detail

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

namespace cli_detail {

struct Session {
  std::ostream& out;
  std::ostream& err;
  std::string run_dir_flag;
  std::string tag;
  std::uint64_t seed = 1;
  std::vector<std::string*> inputs;
};

inline int replay(const std::string& manifest_path, const std::string& run_dir, std::ostream& out,
                  std::ostream& err) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, "unreadable manifest " + manifest_path + ": " + e.what());
  }
  for (const auto& [path, digest] : m.at("inputs").items())
    require(file_digest(path) == digest.get<std::string>(), ErrorCode::integrity,
            "input " + path + " changed since the recorded run");
  std::vector<std::string> args = m.at("argv").get<std::vector<std::string>>();
  const std::string dir = run_dir.empty() ? (fs::path(manifest_path).parent_path().string() + "-replay") : run_dir;
  args.push_back("--run-dir");
  args.push_back(dir);
  std::ostringstream sink;
  const int rc = run_cli(args, sink, err);
  if (rc != 0) return rc;
  const auto again = nlohmann::json::parse(read_file((fs::path(dir) / "manifest.json").string()));
  long same = 0, differ = 0;
  for (const auto& [name, digest] : m.at("outputs").items()) {
    const auto it = again.at("outputs").find(name);
    if (it != again.at("outputs").end() && *it == digest) {
      ++same;
    } else {
      ++differ;
      out << "differs: " << name << '\n';
    }
  }
  out << "replay: " << same << " identical, " << differ << " differing outputs in " << dir << '\n';
  return differ == 0 ? 0 : 1;
}

}  // namespace cli_detail

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  using namespace cli_detail;
  CLI::App app{"Context-aware argument relation prediction with active learning", "argrel"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML config file with option values");
  Session s{out, err, {}, {}, 1, {}};
  app.add_option("--run-dir", s.run_dir_flag, "Output directory (default runs/<timestamp>-<tag>)");
  app.add_option("--tag", s.tag, "Run directory tag (default: the command name)");
  app.add_option("--seed", s.seed, "Run-level seed")->capture_default_str();

  WindowOpts window;
  TrainOpts train_opts;

  // ---- stats ---------------------------------------------------------------
  auto* stats = app.add_subcommand("stats", "Corpus statistics");
  std::string stats_corpus, markers_file;
  stats->add_option("--corpus", stats_corpus)->required();
  stats->add_option("--markers", markers_file, "Marker lexicon file (one per line: marker<TAB>class)");
  int stats_L = 20;
  stats->add_option("-L,--window-size", stats_L)->capture_default_str();

  // ---- synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  SynthConfig sc;
  std::string synth_out;
  synth->add_option("--docs", sc.n_docs)->capture_default_str();
  synth->add_option("--props", sc.props_per_doc)->capture_default_str();
  synth->add_option("--relation-rate", sc.relation_rate)->capture_default_str();
  synth->add_option("--distance-skew", sc.distance_skew)->capture_default_str();
  synth->add_option("--marker-plant-prob", sc.marker_plant_prob)->capture_default_str();
  synth->add_option("--vocab-size", sc.vocab_size)->capture_default_str();
  synth->add_option("--attack-rate", sc.attack_rate)->capture_default_str();
  synth->add_option("--max-distance", sc.max_distance)->capture_default_str();
  synth->add_option("--doc-prefix", sc.doc_prefix)->capture_default_str();
  synth->add_option("--out", synth_out, "Also copy the corpus to this path");

  // ---- train ---------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Supervised training of the relation model");
  std::string train_file, test_file, init_file;
  train_cmd->add_option("--train", train_file)->required();
  train_cmd->add_option("--test", test_file)->required();
  train_cmd->add_option("--init", init_file, "Checkpoint to start from");
  window.add(train_cmd);
  train_opts.add(train_cmd);

  // ---- baseline --------------------------------------------------------------
  auto* base_cmd = app.add_subcommand("baseline", "Feature-based linear baseline");
  BaselineConfig bc;
  base_cmd->add_option("--train", train_file)->required();
  base_cmd->add_option("--test", test_file)->required();
  base_cmd->add_option("--lexicon-size", bc.lexicon_size)->capture_default_str();
  base_cmd->add_option("--reg", bc.linear.reg)->capture_default_str();
  base_cmd->add_option("--epochs", bc.linear.epochs)->capture_default_str();
  base_cmd->add_option("--stopwords", bc.stopword_file);
  window.add(base_cmd);

  // ---- pretrain --------------------------------------------------------------
  auto* pre_cmd = app.add_subcommand("pretrain", "Self-supervised encoder pretraining");
  std::string pre_corpus, objective = "mlm";
  pre_cmd->add_option("--corpus", pre_corpus)->required();
  pre_cmd->add_option("--objective", objective, "mlm or context-pert")->capture_default_str();
  train_opts.add(pre_cmd);

  // ---- transfer --------------------------------------------------------------
  auto* tr_cmd = app.add_subcommand("transfer", "Chained fine-tuning over several labeled corpora");
  std::vector<std::string> stages;
  tr_cmd->add_option("--stage", stages, "Training corpus for one stage, in order")->required();
  tr_cmd->add_option("--test", test_file)->required();
  tr_cmd->add_option("--init", init_file, "Checkpoint for the first stage (e.g. pretrained)");
  window.add(tr_cmd);
  train_opts.add(tr_cmd);

  // ---- al-run / serve ----------------------------------------------------------
  auto* al_cmd = app.add_subcommand("al-run", "One active-learning run");
  ALOpts al;
  std::string strategy;
  al_cmd->add_option("--strategy", strategy, "Acquisition strategy")->required();
  al.add(al_cmd, s.inputs, true);
  window.add(al_cmd);
  train_opts.add(al_cmd);

  auto* serve_cmd = app.add_subcommand("serve", "Annotation backend driving an active-learning run");
  serve_cmd->add_option("--strategy", strategy, "Acquisition strategy")->required();
  al.add(serve_cmd, s.inputs, true);
  window.add(serve_cmd);
  train_opts.add(serve_cmd);

  // ---- al-compare ------------------------------------------------------------
  auto* cmp_cmd = app.add_subcommand("al-compare", "Compare strategies over replicate seeds");
  std::vector<std::string> variant_names;
  int replicates = 5;
  cmp_cmd->add_option("--strategies", variant_names, "Strategies; suffix +tl for warm-start variants")
      ->required()
      ->delimiter(',');
  cmp_cmd->add_option("--replicates", replicates, "Seeds seed..seed+R-1")->capture_default_str();
  al.add(cmp_cmd, s.inputs, false);
  window.add(cmp_cmd);
  train_opts.add(cmp_cmd);

  // ---- eval ------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint or baseline model");
  std::string eval_corpus, ckpt_file, baseline_file;
  eval_cmd->add_option("--corpus", eval_corpus)->required();
  auto* ck_opt = eval_cmd->add_option("--checkpoint", ckpt_file);
  auto* bl_opt = eval_cmd->add_option("--baseline", baseline_file);
  ck_opt->excludes(bl_opt);
  window.add(eval_cmd);

  // ---- replay ----------------------------------------------------------------
  auto* replay_cmd = app.add_subcommand("replay", "Rerun a recorded run and compare its outputs");
  std::string manifest_file;
  replay_cmd->add_option("manifest", manifest_file, "manifest.json of the run")->required();

  s.inputs.insert(s.inputs.end(), {&stats_corpus, &markers_file, &train_file, &test_file, &init_file, &pre_corpus,
                                   &eval_corpus, &ckpt_file, &baseline_file, &bc.stopword_file});

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "argrel: usage error: " << e.what() << '\n';
    return 2;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  try {
    if (cmd == replay_cmd) return replay(manifest_file, s.run_dir_flag, out, err);

    RunDir run = make_run_dir(s.run_dir_flag, s.tag.empty() ? name : s.tag);
    const WindowConfig w = (cmd == stats || cmd == synth || cmd == pre_cmd) ? WindowConfig{} : window.resolve();

    if (cmd == stats) {
      const Corpus c = load_corpus(stats_corpus, Split::train);
      const auto markers = markers_file.empty() ? default_markers() : load_markers(markers_file);
      std::ostringstream os;
      nlohmann::ordered_json j;
      os << "documents " << c.documents.size() << "\npropositions " << c.proposition_count() << "\nrelations "
         << c.relation_count() << '\n';
      const double density = c.proposition_count() ? relation_density(c) : 0.0;
      os << "density " << format_number(density) << '\n';
      j["documents"] = c.documents.size();
      j["propositions"] = c.proposition_count();
      j["relations"] = c.relation_count();
      j["density"] = density;
      j["distance_histogram"] = nlohmann::ordered_json::object();
      for (const auto& [dist, n] : distance_histogram(c)) {
        const std::string key = (dist > 0 ? "+" : "") + std::to_string(dist);
        os << "distance " << key << ' ' << n << '\n';
        j["distance_histogram"][key] = n;
      }
      const double cov = window_coverage(c, stats_L);
      os << "coverage L=" << stats_L << ' ' << format_number(cov) << '\n';
      j["coverage"] = {{"L", stats_L}, {"value", cov}};
      const auto report = validate(c, corpus_profile(c));
      os << "validation_errors " << report.errors.size() << '\n';
      j["validation_errors"] = report.errors.size();
      os << "marker,head,tail,other\n";
      j["markers"] = nlohmann::ordered_json::object();
      for (const auto& [m, cnt] : marker_breakdown(c, markers)) {
        os << m << ',' << cnt.head << ',' << cnt.tail << ',' << cnt.other << '\n';
        j["markers"][m] = {cnt.head, cnt.tail, cnt.other};
      }
      out << os.str();
      run.write("stats.txt", os.str());
      run.write("stats.json", j.dump(2) + '\n');
    } else if (cmd == synth) {
      sc.seed = derive_seed(s.seed, "corpus");
      const auto text = corpus_to_jsonl(generate_synthetic(sc));
      run.write("corpus.jsonl", text);
      if (!synth_out.empty()) write_file(synth_out, text);
      out << "wrote " << sc.n_docs << " documents to " << run.path("corpus.jsonl") << '\n';
    } else if (cmd == train_cmd) {
      const Corpus tr = load_corpus(train_file, Split::train);
      const Corpus te = load_corpus(test_file, Split::test);
      const TrainConfig tc = train_opts.resolve(s.seed);
      std::optional<Checkpoint> init;
      if (!init_file.empty()) init = load_checkpoint(init_file, &tc.encoder);
      const auto res = train(tr, w, tc, init ? &*init : nullptr);
      run.write("model.ckpt", encode_checkpoint(res.checkpoint));
      const auto m = evaluate(predict_corpus(te, res.checkpoint, w), te, w);
      write_metrics_csv(run, "metrics.csv", {{stem_of(test_file), "supervised", 0, s.seed, m}});
      run.write("metrics.json", to_json(m).dump(2) + '\n');
      out << "macro_f1 " << format_number(m.macro_f1) << '\n';
    } else if (cmd == base_cmd) {
      const Corpus tr = load_corpus(train_file, Split::train);
      const Corpus te = load_corpus(test_file, Split::test);
      bc.linear.seed = derive_seed(s.seed, "baseline");
      const auto model = train_baseline(tr, w, bc);
      run.write("baseline.model", encode_baseline(model));
      const auto m = evaluate(predict_corpus(te, model, w), te, w);
      write_metrics_csv(run, "metrics.csv", {{stem_of(test_file), "baseline", 0, s.seed, m}});
      run.write("metrics.json", to_json(m).dump(2) + '\n');
      out << "macro_f1 " << format_number(m.macro_f1) << '\n';
    } else if (cmd == pre_cmd) {
      const Corpus c = load_corpus(pre_corpus, Split::unlabeled);
      const auto res = pretrain(c, objective_from_string(objective), train_opts.resolve(s.seed));
      run.write("pretrained.ckpt", encode_checkpoint(res.checkpoint));
      std::ostringstream os;
      os << "epoch,loss\n";
      for (std::size_t e = 0; e < res.epochs.size(); ++e) os << e + 1 << ',' << format_number(res.epochs[e].loss) << '\n';
      run.write("losses.csv", os.str());
      if (!res.epochs.empty()) out << "final_loss " << format_number(res.epochs.back().loss) << '\n';
    } else if (cmd == tr_cmd) {
      const Corpus te = load_corpus(test_file, Split::test);
      const TrainConfig tc = train_opts.resolve(s.seed);
      std::vector<Corpus> corpora;
      Corpus all;
      for (const auto& st : stages) {
        corpora.push_back(load_corpus(st, Split::train));
        for (const auto& d : corpora.back().documents) all.documents.push_back(d);
      }
      Checkpoint current = init_file.empty() ? init_checkpoint(build_vocab(all, tc.min_count), tc)
                                             : load_checkpoint(init_file, &tc.encoder);
      std::vector<TableRow> rows;
      for (std::size_t k = 0; k < corpora.size(); ++k) {
        current = train(corpora[k], w, tc, &current).checkpoint;
        run.write("stage-" + std::to_string(k + 1) + ".ckpt", encode_checkpoint(current));
        const auto m = evaluate(predict_corpus(te, current, w), te, w);
        rows.push_back({stem_of(test_file), "stage:" + stem_of(stages[k]), static_cast<int>(k + 1), s.seed, m});
        out << "stage " << k + 1 << ' ' << stem_of(stages[k]) << " macro_f1 " << format_number(m.macro_f1) << '\n';
      }
      write_metrics_csv(run, "metrics.csv", rows);
    } else if (cmd == al_cmd || cmd == serve_cmd || cmd == cmp_cmd) {
      const Corpus pool = load_corpus(al.pool, Split::unlabeled);
      const Corpus te = load_corpus(al.test, Split::test);
      ALConfig cfg;
      cfg.T = al.T;
      cfg.b = al.b;
      cfg.window = w;
      cfg.train = train_opts.resolve(s.seed);
      cfg.mc_passes = al.mc_passes;
      cfg.labeling = labeling_unit_from_string(al.labeling);
      cfg.seed = s.seed;
      cfg.run_id = fs::path(run.dir).filename().string();
      std::optional<Checkpoint> warm;
      if (!al.warm_start.empty()) {
        warm = load_checkpoint(al.warm_start, &cfg.train.encoder);
        cfg.warm_start = &*warm;
      }
      if (cmd == cmp_cmd) {
        std::vector<Variant> variants;
        for (const auto& v : variant_names) {
          const bool tl = v.size() > 3 && v.substr(v.size() - 3) == "+tl";
          variants.push_back({strategy_from_string(tl ? v.substr(0, v.size() - 3) : v), tl});
        }
        const auto rep = compare_strategies(variants, replicate_seeds(s.seed, replicates), pool, te, cfg,
                                            stem_of(al.pool));
        write_metrics_csv(run, "metrics.csv", rep.rows);
        std::ostringstream os;
        write_compare_summary(os, rep);
        run.write("summary.csv", os.str());
        out << os.str();
      } else {
        cfg.strategy = strategy_from_string(strategy);
        cfg.checkpoint_dir = run.path("checkpoints");
        cfg.state_path = al.state.empty() ? run.path("al_state.json") : al.state;
        const bool external = cmd == serve_cmd || al.oracle == "external";
        require(external || al.oracle == "simulated", ErrorCode::config,
                "--oracle must be simulated or external");
        cfg.oracle = external ? OracleKind::external : OracleKind::simulated;
        ALTrace trace;
        if (!external) {
          SimulatedOracle oracle;
          trace = run_al(pool, te, cfg, oracle);
        } else {
          ServiceConfig svc;
          svc.data_dir = al.annotation_dir.empty() ? run.path("annotations") : al.annotation_dir;
          svc.overlap = al.overlap;
          svc.overlap_k = al.overlap_k;
          AnnotationService service(pool, cfg.window, svc);
          AnnotationServer server(service, al.static_dir);
          const int port = server.start(al.host, al.port);
          out << "serving http://" << al.host << ':' << port << "/api/v1" << std::endl;
          service.start_run({cfg.run_id, std::string(to_string(cfg.strategy)), cfg.T,
                             resolve_budget(cfg, full_pool(pool).size()), cfg.seed, al.labeling});
          ALObserver obs{[&](int it, std::size_t n, std::string_view st) { service.on_status(it, n, st); }};
          ExternalOracle oracle(service, std::chrono::milliseconds(static_cast<long>(al.label_timeout * 1000)));
          trace = run_al(pool, te, cfg, oracle, &obs);
          service.finish_run();
          server.stop();
        }
        run.write("trace.json", to_json(trace).dump(2) + '\n');
        std::vector<TableRow> rows;
        for (const auto& r : trace.iterations)
          rows.push_back({stem_of(al.pool), std::string(to_string(cfg.strategy)) + (warm ? "+tl" : ""), r.iteration,
                          s.seed, r.metrics});
        write_metrics_csv(run, "metrics.csv", rows);
        for (const auto& r : trace.iterations)
          out << "iteration " << r.iteration << " labeled " << r.labeled << " macro_f1 "
              << format_number(r.metrics.macro_f1) << '\n';
      }
    } else if (cmd == eval_cmd) {
      require(!ckpt_file.empty() || !baseline_file.empty(), ErrorCode::config,
              "eval needs --checkpoint or --baseline");
      const Corpus c = load_corpus(eval_corpus, Split::test);
      const PredictionSet ps = ckpt_file.empty() ? predict_corpus(c, decode_baseline(read_file(baseline_file)), w)
                                                 : predict_corpus(c, load_checkpoint(ckpt_file), w);
      const auto m = evaluate(ps, c, w);
      run.write("predictions.jsonl", predictions_jsonl(ps));
      run.write("metrics.json", to_json(m).dump(2) + '\n');
      write_metrics_csv(run, "metrics.csv", {{stem_of(eval_corpus), ckpt_file.empty() ? "baseline" : "model", 0,
                                             s.seed, m}});
      out << "macro_f1 " << format_number(m.macro_f1) << '\n';
    }

    // Manifest: the argv needed to rerun, the resolved option values and
    // digests of every input and output.
    std::vector<std::string> argv;
    for (std::size_t k = 0; k < args.size(); ++k) {
      if (args[k] == "--run-dir") {
        ++k;
        continue;
      }
      if (args[k].rfind("--run-dir=", 0) == 0) continue;
      argv.push_back(args[k]);
    }
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    for (const CLI::App* a : {static_cast<const CLI::App*>(&app), static_cast<const CLI::App*>(cmd)})
      for (const CLI::Option* o : a->get_options()) {
        if (o->get_lnames().empty() || o->get_name() == "--help") continue;
        const auto key = o->get_lnames().front();
        if (key == "run-dir") continue;
        const auto res = o->results();
        if (!res.empty())
          config[key] = res.size() == 1 ? nlohmann::ordered_json(res.front()) : nlohmann::ordered_json(res);
        else if (!o->get_default_str().empty())
          config[key] = o->get_default_str();
      }
    nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
    for (const std::string* p : s.inputs)
      if (!p->empty() && fs::is_regular_file(*p)) inputs[*p] = file_digest(*p);
    for (const auto& st : stages) inputs[st] = file_digest(st);
    for (const auto& cfg_file : app.get_option("--config")->results())
      if (fs::is_regular_file(cfg_file)) inputs[cfg_file] = file_digest(cfg_file);
    nlohmann::ordered_json manifest = {{"tool", "argrel"},      {"format", 1},       {"command", name},
                                       {"argv", argv},          {"seed", s.seed},    {"config", config},
                                       {"inputs", inputs},      {"outputs", run.output_digests()}};
    run.write("manifest.json", manifest.dump(2) + '\n');
    return 0;
  } catch (const Error& e) {
    err << "argrel: error[" << to_string(e.code()) << "]: " << e.what() << '\n';
    return 1;
  } catch (const ApiError& e) {
    err << "argrel: error[" << e.code() << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "argrel: error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace argrel
