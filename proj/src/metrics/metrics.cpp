#include "tie/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace tie {

namespace {

template <typename Key>
using Extract = std::function<void(const Annotations&, std::set<Key>&)>;

template <typename Key>
F1Counts score(std::span<const Annotations> preds, std::span<const Annotations> golds, const Extract<Key>& extract) {
  if (preds.size() != golds.size())
    throw std::invalid_argument("prediction and gold lists are misaligned (" + std::to_string(preds.size()) +
                                " vs " + std::to_string(golds.size()) + ")");
  F1Counts c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::set<Key> p, g;
    extract(preds[i], p);
    extract(golds[i], g);
    std::int64_t hit = 0;
    for (const auto& k : p) hit += g.count(k) ? 1 : 0;
    c.tp += hit;
    c.fp += static_cast<std::int64_t>(p.size()) - hit;
    c.fn += static_cast<std::int64_t>(g.size()) - hit;
  }
  return c;
}

}  // namespace

F1Counts ent_f1(std::span<const Annotations> preds, std::span<const Annotations> golds) {
  return score<Mention>(preds, golds, [](const Annotations& a, std::set<Mention>& out) {
    out.insert(a.entities.begin(), a.entities.end());
  });
}

F1Counts rel_f1(std::span<const Annotations> preds, std::span<const Annotations> golds) {
  return score<Link>(preds, golds, [](const Annotations& a, std::set<Link>& out) {
    out.insert(a.links.begin(), a.links.end());
  });
}

F1Counts trig_f1(std::span<const Annotations> preds, std::span<const Annotations> golds) {
  return ent_f1(preds, golds);
}

F1Counts arg_f1(std::span<const Annotations> preds, std::span<const Annotations> golds,
                bool require_trigger_offsets) {
  // (role, argument span, event type, trigger span or a fixed placeholder)
  using Key = std::tuple<std::string, Span, std::string, Span>;
  return score<Key>(preds, golds, [require_trigger_offsets](const Annotations& a, std::set<Key>& out) {
    for (const auto& l : a.links)
      out.emplace(l.type, l.object.span, l.subject.type, require_trigger_offsets ? l.subject.span : Span{-1, -1});
  });
}

F1Counts senti_triplet_f1(std::span<const Annotations> preds, std::span<const Annotations> golds) {
  using Key = std::tuple<std::string, Span, Span>;
  return score<Key>(preds, golds, [](const Annotations& a, std::set<Key>& out) {
    for (const auto& l : a.links) out.emplace(l.type, l.subject.span, l.object.span);
  });
}

std::vector<std::string> metrics_for(TaskKind task) {
  switch (task) {
    case TaskKind::ner: return {"ent"};
    case TaskKind::re: return {"ent", "rel"};
    case TaskKind::ee: return {"trig", "arg"};
    case TaskKind::absa: return {"triplet"};
  }
  return {};
}

double headline_f1(TaskKind task, const std::map<std::string, F1Counts>& m) {
  switch (task) {
    case TaskKind::ner: return m.at("ent").f1();
    case TaskKind::re: return m.at("rel").f1();
    case TaskKind::ee: return 0.5 * (m.at("trig").f1() + m.at("arg").f1());
    case TaskKind::absa: return m.at("triplet").f1();
  }
  return 0.0;
}

void ScoreReport::add(const std::string& dataset, TaskKind task, std::span<const Annotations> preds,
                      std::span<const Annotations> golds) {
  auto& slot = per_dataset[dataset];
  for (const auto& name : metrics_for(task)) {
    F1Counts c;
    if (name == "ent") c = ent_f1(preds, golds);
    else if (name == "rel") c = rel_f1(preds, golds);
    else if (name == "trig") c = trig_f1(preds, golds);
    else if (name == "arg") c = arg_f1(preds, golds);
    else c = senti_triplet_f1(preds, golds);
    slot[name] += c;
    aggregate[name] += c;
  }
}

namespace {

nlohmann::json counts_json(const F1Counts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn},
          {"precision", c.precision()}, {"recall", c.recall()}, {"f1", c.f1()}};
}

}  // namespace

nlohmann::json ScoreReport::to_json() const {
  nlohmann::json j;
  j["datasets"] = nlohmann::json::object();
  for (const auto& [ds, metrics] : per_dataset)
    for (const auto& [name, c] : metrics) j["datasets"][ds][name] = counts_json(c);
  j["aggregate"] = nlohmann::json::object();
  for (const auto& [name, c] : aggregate) j["aggregate"][name] = counts_json(c);
  return j;
}

std::string ScoreReport::table() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-20s %-8s %7s %7s %7s %6s %6s %6s\n", "dataset", "metric", "P", "R", "F1",
                "TP", "FP", "FN");
  out << line;
  auto row = [&](const std::string& ds, const std::string& name, const F1Counts& c) {
    std::snprintf(line, sizeof line, "%-20s %-8s %7.4f %7.4f %7.4f %6lld %6lld %6lld\n", ds.c_str(), name.c_str(),
                  c.precision(), c.recall(), c.f1(), static_cast<long long>(c.tp), static_cast<long long>(c.fp),
                  static_cast<long long>(c.fn));
    out << line;
  };
  for (const auto& [ds, metrics] : per_dataset)
    for (const auto& [name, c] : metrics) row(ds, name, c);
  if (per_dataset.size() > 1)
    for (const auto& [name, c] : aggregate) row("(micro)", name, c);
  return out.str();
}

}  // namespace tie
