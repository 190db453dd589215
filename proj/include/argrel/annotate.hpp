// Human-in-the-loop annotation backend.
//
// AnnotationService owns the labeled store for one active AL run. Reads take
// a shared lock and every mutation goes through one exclusive writer. Accepted
// submissions are appended to a write-ahead log before they become visible,
// and a snapshot periodically compacts the log.
//
// AnnotationServer exposes the service over HTTP under /api/v1 (with /api
// aliases). ExternalOracle plugs the service into run_al.
#pragma once

#include <chrono>
#include <condition_variable>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "argrel/alloop.hpp"

// After the Eigen-based headers: <resolv.h> defines a `_res` macro.
#include <httplib.h>

namespace argrel {

// An error reported to API clients as {code, rule, message}.
class ApiError : public std::runtime_error {
 public:
  ApiError(int status, std::string code, std::string rule, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)), rule_(std::move(rule)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }
  const std::string& rule() const { return rule_; }
  nlohmann::ordered_json payload() const { return {{"code", code_}, {"rule", rule_}, {"message", what()}}; }

 private:
  int status_;
  std::string code_;
  std::string rule_;
};

enum class TaskStatus { pending, labeled, skipped };

inline std::string_view to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::pending: return "pending";
    case TaskStatus::labeled: return "labeled";
    case TaskStatus::skipped: return "skipped";
  }
  return "pending";
}

inline TaskStatus task_status_from_string(std::string_view s) {
  if (s == "labeled") return TaskStatus::labeled;
  if (s == "skipped") return TaskStatus::skipped;
  if (s == "pending") return TaskStatus::pending;
  fail(ErrorCode::parse, "unknown task status '" + std::string(s) + "'");
}

struct LabelSubmission {
  std::string task_id;
  std::vector<std::pair<int, Label>> decisions;  // (tail, label)
  std::string annotator;
  std::string timestamp;
};

struct StoredTask {
  LabelTask task;
  int iteration = 0;
  TaskStatus status = TaskStatus::pending;
  std::vector<LabelSubmission> submissions;  // first one is authoritative
  std::string lease_holder;
  std::chrono::steady_clock::time_point lease_until{};
};

struct RunInfo {
  std::string run_id = "run";
  std::string strategy;
  int T = 0;
  std::size_t b = 0;
  std::uint64_t seed = 0;
  std::string labeling = "pairwise";
};

inline nlohmann::ordered_json to_json(const RunInfo& r) {
  return {{"run_id", r.run_id}, {"strategy", r.strategy}, {"T", r.T},
          {"b", r.b},           {"seed", r.seed},         {"labeling", r.labeling}};
}

inline RunInfo run_info_from_json(const nlohmann::json& j) {
  RunInfo r;
  r.run_id = j.value("run_id", r.run_id);
  r.strategy = j.value("strategy", r.strategy);
  r.T = j.value("T", r.T);
  r.b = j.value("b", r.b);
  r.seed = j.value("seed", r.seed);
  r.labeling = j.value("labeling", r.labeling);
  return r;
}

inline nlohmann::ordered_json to_json(const LabelSubmission& s) {
  nlohmann::ordered_json d = nlohmann::ordered_json::array();
  for (const auto& [tail, label] : s.decisions)
    d.push_back({{"tail", tail}, {"label", is_positive(label) ? to_string(label) : "none"}});
  return {{"task_id", s.task_id}, {"annotator", s.annotator}, {"timestamp", s.timestamp}, {"decisions", d}};
}

inline LabelSubmission submission_from_json(const nlohmann::json& j) {
  LabelSubmission s;
  s.task_id = j.at("task_id").get<std::string>();
  s.annotator = j.value("annotator", std::string());
  s.timestamp = j.value("timestamp", std::string());
  for (const auto& d : j.at("decisions")) {
    const auto label = d.at("label").get<std::string>();
    if (label != "support" && label != "attack" && label != "none")
      throw ApiError(400, "bad_request", "schema", "decision label must be support, attack or none");
    s.decisions.emplace_back(d.at("tail").get<int>(), label_from_string(label));
  }
  return s;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Ratings pooled from every task that received at least two submissions.
// Each candidate is one item; rows keep the first m ratings, m being the
// smallest submission count among those tasks, so every row has equal size.
inline std::optional<double> overlap_kappa(const std::vector<const StoredTask*>& tasks) {
  std::size_t m = 0;
  for (const auto* t : tasks)
    if (t->submissions.size() >= 2 && !t->task.candidates.empty())
      m = m == 0 ? t->submissions.size() : std::min(m, t->submissions.size());
  if (m < 2) return std::nullopt;
  RatingTable table;
  for (const auto* t : tasks) {
    if (t->submissions.size() < 2 || t->task.candidates.empty()) continue;
    for (int cand : t->task.candidates) {
      std::vector<long> row(kNumLabels, 0);
      for (std::size_t k = 0; k < m; ++k)
        for (const auto& [tail, label] : t->submissions[k].decisions)
          if (tail == cand) ++row[static_cast<std::size_t>(label)];
      table.push_back(std::move(row));
    }
  }
  return fleiss_kappa(table);
}

// AMPERE constraints apply when every proposition carries an AMPERE type.
inline Profile corpus_profile(const Corpus& c) {
  bool any = false;
  for (const auto& d : c.documents)
    for (const auto& p : d.propositions) {
      if (!is_ampere_type(p.type)) return Profile::basic;
      any = true;
    }
  return any ? Profile::ampere : Profile::basic;
}

struct ServiceConfig {
  std::string data_dir;        // empty: in-memory only
  bool overlap = false;        // serve each task to several annotators
  int overlap_k = 2;           // submissions collected per task in overlap mode
  double lease_seconds = 600;  // how long a queued task stays reserved
  int snapshot_every = 100;    // log records between snapshots
  std::optional<Profile> profile;
};

class AnnotationService {
 public:
  AnnotationService(const Corpus& corpus, const WindowConfig& window, ServiceConfig cfg = {})
      : corpus_(corpus), window_(window), cfg_(std::move(cfg)) {
    window_.check();
    require(cfg_.overlap_k >= 2, ErrorCode::config, "overlap_k must be >= 2");
    profile_ = cfg_.profile.value_or(corpus_profile(corpus_));
    for (std::size_t d = 0; d < corpus_.documents.size(); ++d) doc_index_[corpus_.documents[d].doc_id] = d;
    if (!cfg_.data_dir.empty()) recover();
  }

  const Corpus& corpus() const { return corpus_; }
  Profile profile() const { return profile_; }

  // ---- run lifecycle (AL side) --------------------------------------------

  void start_run(const RunInfo& info) {
    std::unique_lock lock(mu_);
    log_event({{"type", "start"}, {"run", to_json(info)}});
    apply_start(info);
    compact_if_due();
  }

  void finish_run() {
    std::unique_lock lock(mu_);
    log_event({{"type", "finish"}});
    active_ = false;
    status_ = "finished";
    compact_if_due();
    cv_.notify_all();
  }

  // Publishes the tasks of one AL iteration. Republishing the same batch
  // after a restart keeps the recovered submissions.
  void publish_batch(int iteration, const std::vector<LabelTask>& tasks) {
    std::unique_lock lock(mu_);
    if (!active_) throw ApiError(409, "conflict", "no_active_run", "no active run to publish tasks into");
    if (iteration == iteration_ && same_batch(tasks)) return;
    nlohmann::json j = {{"type", "batch"}, {"iteration", iteration}, {"tasks", nlohmann::json::array()}};
    for (const auto& t : tasks) j["tasks"].push_back(task_state(t));
    log_event(j);
    apply_batch(iteration, tasks);
    compact_if_due();
  }

  void on_status(int iteration, std::size_t labeled, std::string_view status) {
    std::unique_lock lock(mu_);
    status_iteration_ = iteration;
    labeled_props_ = labeled;
    status_ = std::string(status);
  }

  bool batch_complete() const {
    std::shared_lock lock(mu_);
    return batch_complete_locked();
  }

  // Blocks until every task of the current batch has an authoritative
  // submission. Returns false on timeout.
  bool wait_for_batch(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    return cv_.wait_for(lock, timeout, [&] { return batch_complete_locked(); });
  }

  std::vector<TaskAnswer> answers(const std::vector<LabelTask>& tasks) const {
    std::shared_lock lock(mu_);
    std::vector<TaskAnswer> out;
    for (const auto& t : tasks) {
      const auto it = tasks_.find(t.task_id);
      require(it != tasks_.end() && !it->second.submissions.empty(), ErrorCode::state,
              "task " + t.task_id + " has no submission");
      out.push_back({t.task_id, it->second.submissions.front().decisions});
    }
    return out;
  }

  // ---- API operations ------------------------------------------------------

  nlohmann::ordered_json queue(const std::string& annotator, long limit) {
    if (limit < 0) throw ApiError(400, "bad_request", "limit", "limit must be >= 0");
    std::unique_lock lock(mu_);
    require_active();
    std::vector<StoredTask*> open;
    const auto now = std::chrono::steady_clock::now();
    for (const auto& id : batch_) {
      StoredTask& st = tasks_.at(id);
      if (!servable(st, annotator, now)) continue;
      open.push_back(&st);
    }
    std::stable_sort(open.begin(), open.end(),
                     [](const StoredTask* a, const StoredTask* b) { return a->task.score > b->task.score; });
    if (open.size() > static_cast<std::size_t>(limit)) open.resize(static_cast<std::size_t>(limit));
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    const auto until = now + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                 std::chrono::duration<double>(cfg_.lease_seconds));
    for (StoredTask* st : open) {
      if (!cfg_.overlap) {
        st->lease_holder = annotator;
        st->lease_until = until;
      }
      out.push_back(task_payload(*st));
    }
    return {{"tasks", out}};
  }

  nlohmann::ordered_json submit(LabelSubmission sub) {
    std::unique_lock lock(mu_);
    require_active();
    if (sub.annotator.empty()) sub.annotator = "anonymous";
    if (sub.timestamp.empty()) sub.timestamp = utc_timestamp();
    const auto it = tasks_.find(sub.task_id);
    if (it == tasks_.end() || it->second.iteration != iteration_)
      throw ApiError(409, "conflict", "stale", "task " + sub.task_id + " is not part of the current batch");
    StoredTask& st = it->second;
    for (const auto& prev : st.submissions)
      if (prev.annotator == sub.annotator || !cfg_.overlap)
        throw ApiError(409, "conflict", "duplicate", "task " + sub.task_id + " was already labeled");
    if (cfg_.overlap && st.submissions.size() >= static_cast<std::size_t>(cfg_.overlap_k))
      throw ApiError(409, "conflict", "duplicate", "task " + sub.task_id + " already has enough submissions");
    if (!cfg_.overlap && !st.lease_holder.empty() && st.lease_holder != sub.annotator &&
        std::chrono::steady_clock::now() < st.lease_until)
      throw ApiError(409, "conflict", "leased", "task " + sub.task_id + " is leased by " + st.lease_holder);
    check_constraints(st, sub);

    const bool authoritative = st.submissions.empty();
    log_event({{"type", "submission"}, {"submission", to_json(sub)}});
    apply_submission(sub);
    compact_if_due();
    if (authoritative) cv_.notify_all();
    return {{"status", "accepted"},
            {"task_id", sub.task_id},
            {"authoritative", authoritative},
            {"batch_complete", batch_complete_locked()}};
  }

  nlohmann::ordered_json progress() const {
    std::shared_lock lock(mu_);
    std::size_t pending = 0;
    std::map<std::string, long> per_annotator;
    std::vector<const StoredTask*> batch;
    for (const auto& id : batch_) {
      const StoredTask& st = tasks_.at(id);
      batch.push_back(&st);
      if (st.status == TaskStatus::pending) ++pending;
    }
    std::vector<const StoredTask*> all;
    for (const auto& [id, st] : tasks_) {
      all.push_back(&st);
      for (const auto& s : st.submissions) ++per_annotator[s.annotator];
    }
    nlohmann::ordered_json j = {{"run_id", run_.run_id},
                                {"active", active_},
                                {"iteration", std::max(iteration_, status_iteration_)},
                                {"labeled", labeled_props_},
                                {"pending", pending},
                                {"batch_size", batch_.size()},
                                {"status", status_},
                                {"per_annotator", per_annotator}};
    const auto kappa = overlap_kappa(all);
    j["kappa"] = kappa ? nlohmann::ordered_json(*kappa) : nlohmann::ordered_json(nullptr);
    return j;
  }

  nlohmann::ordered_json document(const std::string& doc_id) const {
    std::shared_lock lock(mu_);
    const auto it = doc_index_.find(doc_id);
    if (it == doc_index_.end()) throw ApiError(404, "not_found", "", "unknown document " + doc_id);
    const Document& doc = corpus_.documents[it->second];
    nlohmann::ordered_json props = nlohmann::ordered_json::array();
    for (const auto& p : doc.propositions) props.push_back({{"id", p.id}, {"text", p.text}, {"type", to_string(p.type)}});
    nlohmann::ordered_json rels = nlohmann::ordered_json::array();
    const auto lit = labels_.find(doc_id);
    if (lit != labels_.end())
      for (const auto& [pair, label] : lit->second)
        rels.push_back({{"head", pair.first}, {"tail", pair.second}, {"label", is_positive(label) ? to_string(label) : "none"}});
    return {{"doc_id", doc_id}, {"propositions", props}, {"labels", rels}};
  }

  nlohmann::ordered_json run() const {
    std::shared_lock lock(mu_);
    auto j = to_json(run_);
    j["active"] = active_;
    j["iteration"] = std::max(iteration_, status_iteration_);
    j["status"] = status_;
    j["overlap"] = cfg_.overlap;
    j["window"] = {{"L", window_.L}, {"mode", to_string(window_.mode)}, {"max_tokens", window_.max_tokens}};
    j["profile"] = profile_ == Profile::ampere ? "ampere" : "basic";
    return j;
  }

  // Labeled store as a corpus: every positive authoritative label becomes a
  // relation.
  Corpus labeled_corpus() const {
    std::shared_lock lock(mu_);
    Corpus c = corpus_;
    for (auto& d : c.documents) {
      d.relations.clear();
      const auto it = labels_.find(d.doc_id);
      if (it == labels_.end()) continue;
      for (const auto& [pair, label] : it->second)
        if (is_positive(label)) d.relations.push_back({pair.first, pair.second, label});
    }
    return c;
  }

  std::size_t stored_label_count() const {
    std::shared_lock lock(mu_);
    std::size_t n = 0;
    for (const auto& [doc, pairs] : labels_) n += pairs.size();
    return n;
  }

  // Forces a snapshot and truncates the log.
  void snapshot() {
    std::unique_lock lock(mu_);
    write_snapshot();
  }

 private:
  using PairLabels = std::map<std::pair<int, int>, Label>;

  void require_active() const {
    if (!active_) throw ApiError(409, "conflict", "no_active_run", "no active AL run");
  }

  bool batch_complete_locked() const {
    for (const auto& id : batch_)
      if (tasks_.at(id).submissions.empty()) return false;
    return !batch_.empty();
  }

  bool same_batch(const std::vector<LabelTask>& tasks) const {
    if (tasks.size() != batch_.size()) return false;
    for (std::size_t k = 0; k < tasks.size(); ++k)
      if (tasks[k].task_id != batch_[k]) return false;
    return true;
  }

  bool servable(const StoredTask& st, const std::string& annotator,
                std::chrono::steady_clock::time_point now) const {
    if (cfg_.overlap) {
      if (st.submissions.size() >= static_cast<std::size_t>(cfg_.overlap_k)) return false;
      for (const auto& s : st.submissions)
        if (s.annotator == annotator) return false;
    } else {
      if (st.status != TaskStatus::pending) return false;
      if (!st.lease_holder.empty() && st.lease_holder != annotator && now < st.lease_until) return false;
    }
    if (st.task.candidates.empty()) return true;
    const Document& doc = corpus_.documents[st.task.doc];
    const auto lit = labels_.find(doc.doc_id);
    if (lit == labels_.end()) return true;
    for (int c : st.task.candidates)
      if (!lit->second.count({st.task.head, c})) return true;
    return cfg_.overlap;
  }

  nlohmann::ordered_json task_payload(const StoredTask& st) const {
    const Document& doc = corpus_.documents[st.task.doc];
    std::vector<int> lengths;
    for (const auto& p : doc.propositions) lengths.push_back(default_token_length(p.text));
    nlohmann::ordered_json window = nlohmann::ordered_json::array();
    for (int i : window_context(doc, st.task.head, window_, lengths)) {
      const auto& p = doc.propositions[static_cast<std::size_t>(i)];
      window.push_back({{"id", p.id}, {"text", p.text}, {"type", to_string(p.type)}});
    }
    return {{"task_id", st.task.task_id}, {"doc_id", doc.doc_id},   {"head", st.task.head},
            {"candidates", st.task.candidates}, {"window", window}, {"score", st.task.score},
            {"status", to_string(st.status)},   {"iteration", st.iteration}};
  }

  void check_constraints(const StoredTask& st, const LabelSubmission& sub) const {
    std::set<int> seen;
    for (const auto& [tail, label] : sub.decisions)
      if (!seen.insert(tail).second)
        throw ApiError(422, "constraint_violation", "coverage", "tail " + std::to_string(tail) + " decided twice");
    if (seen != std::set<int>(st.task.candidates.begin(), st.task.candidates.end()))
      throw ApiError(422, "constraint_violation", "coverage", "decisions must cover exactly the task's candidates");

    const Document& doc = corpus_.documents[st.task.doc];
    const int head = st.task.head;
    const auto lit = labels_.find(doc.doc_id);
    for (const auto& [tail, label] : sub.decisions) {
      if (!is_positive(label)) continue;
      if (lit != labels_.end())
        for (const auto& [pair, existing] : lit->second)
          if (pair.second == tail && pair.first != head && is_positive(existing))
            throw ApiError(422, "constraint_violation", "single-outgoing",
                           "proposition " + std::to_string(tail) + " already relates to proposition " +
                               std::to_string(pair.first));
      if (profile_ == Profile::ampere &&
          is_factual(doc.propositions[static_cast<std::size_t>(head)].type) &&
          is_subjective(doc.propositions[static_cast<std::size_t>(tail)].type))
        throw ApiError(422, "constraint_violation", "factual-head",
                       "subjective proposition " + std::to_string(tail) + " cannot target factual proposition " +
                           std::to_string(head));
    }
  }

  // ---- state transitions (shared by live calls and log replay) -------------

  void apply_start(const RunInfo& info) {
    run_ = info;
    started_ = true;
    active_ = true;
    status_ = "started";
  }

  void apply_batch(int iteration, const std::vector<LabelTask>& tasks) {
    iteration_ = iteration;
    batch_.clear();
    for (const auto& t : tasks) {
      require(t.doc < corpus_.documents.size(), ErrorCode::precondition, "task " + t.task_id + " names a missing doc");
      StoredTask& st = tasks_[t.task_id];
      st.task = t;
      st.iteration = iteration;
      st.status = TaskStatus::pending;
      st.submissions.clear();
      batch_.push_back(t.task_id);
    }
  }

  void apply_submission(const LabelSubmission& sub) {
    StoredTask& st = tasks_.at(sub.task_id);
    const bool authoritative = st.submissions.empty();
    st.submissions.push_back(sub);
    st.status = TaskStatus::labeled;
    st.lease_holder.clear();
    if (!authoritative) return;
    auto& pairs = labels_[corpus_.documents[st.task.doc].doc_id];
    for (const auto& [tail, label] : sub.decisions) pairs[{st.task.head, tail}] = label;
  }

  // ---- persistence ---------------------------------------------------------

  std::filesystem::path wal_path() const { return std::filesystem::path(cfg_.data_dir) / "labels.wal"; }
  std::filesystem::path snapshot_path() const { return std::filesystem::path(cfg_.data_dir) / "snapshot.json"; }

  static nlohmann::json task_state(const LabelTask& t) {
    return {{"task_id", t.task_id}, {"doc", t.doc}, {"head", t.head}, {"candidates", t.candidates}, {"score", t.score}};
  }

  static LabelTask task_from_state(const nlohmann::json& j) {
    return {j.at("task_id").get<std::string>(), j.at("doc").get<std::size_t>(), j.at("head").get<int>(),
            j.at("candidates").get<std::vector<int>>(), j.at("score").get<double>()};
  }

  void log_event(nlohmann::json event) {
    if (cfg_.data_dir.empty()) return;
    event["seq"] = ++seq_;
    std::ofstream out(wal_path(), std::ios::app | std::ios::binary);
    require(out.good(), ErrorCode::io, "cannot append to " + wal_path().string());
    out << event.dump() << '\n';
    out.flush();
    require(out.good(), ErrorCode::io, "write to " + wal_path().string() + " failed");
    ++since_snapshot_;
  }

  void replay(const nlohmann::json& e) {
    const auto type = e.at("type").get<std::string>();
    if (type == "start") {
      apply_start(run_info_from_json(e.at("run")));
    } else if (type == "finish") {
      active_ = false;
      status_ = "finished";
    } else if (type == "batch") {
      std::vector<LabelTask> tasks;
      for (const auto& t : e.at("tasks")) tasks.push_back(task_from_state(t));
      apply_batch(e.at("iteration").get<int>(), tasks);
    } else if (type == "submission") {
      apply_submission(submission_from_json(e.at("submission")));
    } else {
      fail(ErrorCode::parse, "unknown log record type '" + type + "'");
    }
  }

  void recover() {
    std::filesystem::create_directories(cfg_.data_dir);
    long applied = 0;
    if (std::filesystem::exists(snapshot_path())) {
      std::ifstream in(snapshot_path());
      nlohmann::json s;
      try {
        s = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::parse, "unreadable snapshot " + snapshot_path().string() + ": " + e.what());
      }
      applied = s.at("seq").get<long>();
      for (const auto& e : s.at("events")) replay(e);
    }
    seq_ = applied;
    if (std::filesystem::exists(wal_path())) {
      std::ifstream in(wal_path());
      std::string line;
      while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        nlohmann::json e;
        try {
          e = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
          break;  // torn final record from an interrupted append
        }
        const long seq = e.at("seq").get<long>();
        if (seq <= applied) continue;
        replay(e);
        seq_ = seq;
      }
    }
    if (seq_ > applied) write_snapshot();
  }

  // The snapshot stores the minimal event sequence that rebuilds the state.
  // The current batch is replayed last so it stays current.
  void write_snapshot() {
    if (cfg_.data_dir.empty()) return;
    nlohmann::json events = nlohmann::json::array();
    if (started_) events.push_back({{"type", "start"}, {"run", to_json(run_)}});
    std::map<int, std::vector<const StoredTask*>> by_iteration;
    for (const auto& [id, st] : tasks_)
      if (st.iteration != iteration_) by_iteration[st.iteration].push_back(&st);
    auto& current = by_iteration[iteration_];
    for (const auto& id : batch_) current.push_back(&tasks_.at(id));
    std::vector<int> order;
    for (const auto& [it, list] : by_iteration)
      if (it != iteration_) order.push_back(it);
    if (iteration_ > 0) order.push_back(iteration_);
    for (int it : order) {
      const auto& list = by_iteration[it];
      nlohmann::json batch = {{"type", "batch"}, {"iteration", it}, {"tasks", nlohmann::json::array()}};
      for (const auto* st : list) batch["tasks"].push_back(task_state(st->task));
      events.push_back(batch);
      for (const auto* st : list)
        for (const auto& s : st->submissions) events.push_back({{"type", "submission"}, {"submission", to_json(s)}});
    }
    if (started_ && !active_) events.push_back({{"type", "finish"}});
    const nlohmann::json snap = {{"seq", seq_}, {"events", events}};
    const auto tmp = snapshot_path().string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      require(out.good(), ErrorCode::io, "cannot write snapshot " + tmp);
      out << snap.dump();
    }
    std::filesystem::rename(tmp, snapshot_path());
    std::ofstream(wal_path(), std::ios::trunc | std::ios::binary);
    since_snapshot_ = 0;
  }

  void compact_if_due() {
    if (!cfg_.data_dir.empty() && since_snapshot_ >= cfg_.snapshot_every) write_snapshot();
  }

 private:
  Corpus corpus_;
  WindowConfig window_;
  ServiceConfig cfg_;
  Profile profile_ = Profile::basic;
  std::map<std::string, std::size_t> doc_index_;

  mutable std::shared_mutex mu_;
  std::condition_variable_any cv_;

  RunInfo run_;
  bool active_ = false;
  std::string status_ = "idle";
  int iteration_ = 0;
  int status_iteration_ = 0;
  std::size_t labeled_props_ = 0;
  std::vector<std::string> batch_;
  std::map<std::string, StoredTask> tasks_;
  std::map<std::string, PairLabels> labels_;
  long seq_ = 0;
  int since_snapshot_ = 0;
  bool started_ = false;
};

// Oracle backed by human submissions. answer() publishes the tasks and
// blocks until the batch is complete; on timeout it throws and the caller's
// saved AL state lets a later run resume the same iteration.
class ExternalOracle : public Oracle {
 public:
  ExternalOracle(AnnotationService& service, std::chrono::milliseconds timeout)
      : service_(service), timeout_(timeout) {}

  std::vector<TaskAnswer> answer(const Corpus&, const std::vector<LabelTask>& tasks, int iteration) override {
    service_.publish_batch(iteration, tasks);
    if (tasks.empty()) return {};
    if (!service_.wait_for_batch(timeout_))
      fail(ErrorCode::timeout, "timed out waiting for labels of iteration " + std::to_string(iteration) +
                                   "; rerun with the same state file to resume");
    return service_.answers(tasks);
  }

 private:
  AnnotationService& service_;
  std::chrono::milliseconds timeout_;
};

// HTTP front end.
class AnnotationServer {
 public:
  explicit AnnotationServer(AnnotationService& service, const std::string& static_dir = {}) : service_(service) {
    for (const std::string prefix : {"/api/v1", "/api"}) routes(prefix);
    if (!static_dir.empty()) server_.set_mount_point("/", static_dir);
  }

  ~AnnotationServer() { stop(); }

  // Binds to `port` (0 picks a free one) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    require(bound > 0, ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  // Serves on the calling thread until stop() is called.
  void listen(const std::string& host, int port) {
    require(server_.listen(host, port), ErrorCode::io, "cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  static std::string annotator_of(const httplib::Request& req) {
    return req.has_header("X-Annotator-Id") ? req.get_header_value("X-Annotator-Id") : std::string("anonymous");
  }

  template <class Fn>
  void guarded(httplib::Response& res, Fn&& fn) {
    try {
      const auto body = fn();
      res.set_content(body.dump(), "application/json");
    } catch (const ApiError& e) {
      res.status = e.status();
      res.set_content(e.payload().dump(), "application/json");
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      res.set_content(ApiError(400, "bad_request", "schema", e.what()).payload().dump(), "application/json");
    } catch (const Error& e) {
      res.status = 500;
      res.set_content(ApiError(500, std::string(to_string(e.code())), "", e.what()).payload().dump(),
                      "application/json");
    }
  }

  void routes(const std::string& p) {
    server_.Get(p + "/queue", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        long limit = 10;
        if (req.has_param("limit")) {
          const auto v = req.get_param_value("limit");
          char* end = nullptr;
          limit = std::strtol(v.c_str(), &end, 10);
          if (v.empty() || *end != '\0') throw ApiError(400, "bad_request", "limit", "limit must be an integer");
        }
        return service_.queue(annotator_of(req), limit);
      });
    });
    server_.Post(p + "/labels", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto sub = submission_from_json(nlohmann::json::parse(req.body));
        if (sub.annotator.empty()) sub.annotator = annotator_of(req);
        return service_.submit(std::move(sub));
      });
    });
    server_.Get(p + "/progress", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { return service_.progress(); });
    });
    server_.Get(p + R"(/doc/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return service_.document(req.matches[1]); });
    });
    server_.Get(p + "/run", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { return service_.run(); });
    });
  }

  AnnotationService& service_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace argrel
