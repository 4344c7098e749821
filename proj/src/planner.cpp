#include "adsy/planner.hpp"

#include <deque>
#include <set>

namespace adsy {

std::optional<Plan> plan(const TransitionFn& next_state, const SymbolicState& init,
                         const Goal& goal, int locations, int max_depth, PlanStats* stats) {
  PlanStats local;
  PlanStats& st = stats ? *stats : local;

  struct Node {
    SymbolicState state;
    std::int64_t parent = -1;
    ActionId action;
    int depth = 0;
  };
  std::vector<Node> nodes;
  auto reconstruct = [&](std::int64_t at) {
    Plan p;
    std::vector<std::int64_t> chain;
    for (std::int64_t i = at; i >= 0; i = nodes[static_cast<std::size_t>(i)].parent)
      chain.push_back(i);
    std::reverse(chain.begin(), chain.end());
    for (std::size_t i = 0; i < chain.size(); ++i) {
      const Node& n = nodes[static_cast<std::size_t>(chain[i])];
      p.trace.push_back(n.state);
      if (i > 0) p.actions.push_back(n.action);
    }
    return p;
  };

  SymbolicState start = init;
  start.canonicalize();
  if (goal.matches(start)) {
    Plan p;
    p.trace.push_back(start);
    return p;
  }

  std::set<std::vector<SymbolCode>> visited;
  visited.insert(start.code_multiset());
  nodes.push_back(Node{start, -1, ActionId{}, 0});
  std::deque<std::int64_t> frontier{0};
  const int num_actions = locations * locations;

  while (!frontier.empty()) {
    const std::int64_t cur = frontier.front();
    frontier.pop_front();
    const int depth = nodes[static_cast<std::size_t>(cur)].depth;
    if (depth >= max_depth) continue;
    ++st.expanded;
    for (int flat = 0; flat < num_actions; ++flat) {
      const ActionId a = ActionId::from_flat(flat, locations);
      const SymbolicState state = nodes[static_cast<std::size_t>(cur)].state;
      SymbolicState next = next_state(state, a);
      next.canonicalize();
      ++st.generated;
      auto key = next.code_multiset();
      if (visited.count(key)) continue;
      visited.insert(std::move(key));
      nodes.push_back(Node{std::move(next), cur, a, depth + 1});
      const std::int64_t id = static_cast<std::int64_t>(nodes.size()) - 1;
      if (goal.matches(nodes.back().state)) {
        st.visited = static_cast<std::int64_t>(visited.size());
        return reconstruct(id);
      }
      frontier.push_back(id);
    }
  }
  st.visited = static_cast<std::int64_t>(visited.size());
  return std::nullopt;
}

SymbolicState ForwardTransition::operator()(const SymbolicState& s, ActionId a) const {
  SymbolicState canon = s;
  canon.canonicalize();
  std::vector<SymbolCode> key_codes;
  for (const auto& [id, c] : canon.objects) key_codes.push_back(c);
  const auto key = std::make_pair(std::move(key_codes), a.pick_loc * 1024 + a.release_loc);
  auto it = cache_.find(key);
  if (it != cache_.end()) {
    SymbolicState out = canon;
    for (std::size_t i = 0; i < out.objects.size(); ++i) out.objects[i].second = it->second[i];
    return out;
  }
  SymbolicState out = fwd_->predict_next(canon, a);
  std::vector<SymbolCode> next_codes;
  for (const auto& [id, c] : out.objects) next_codes.push_back(c);
  cache_.emplace(key, std::move(next_codes));
  return out;
}

std::optional<OraclePlan> plan_with_oracle(const WorldState& init,
                                           const std::function<bool(const WorldState&)>& goal,
                                           int max_depth, PlanStats* stats) {
  PlanStats local;
  PlanStats& st = stats ? *stats : local;

  struct Node {
    WorldState state;
    std::int64_t parent = -1;
    ActionId action;
    int depth = 0;
  };
  std::vector<Node> nodes;
  auto reconstruct = [&](std::int64_t at) {
    OraclePlan p;
    std::vector<std::int64_t> chain;
    for (std::int64_t i = at; i >= 0; i = nodes[static_cast<std::size_t>(i)].parent)
      chain.push_back(i);
    std::reverse(chain.begin(), chain.end());
    for (std::size_t i = 0; i < chain.size(); ++i) {
      p.trace.push_back(nodes[static_cast<std::size_t>(chain[i])].state);
      if (i > 0) p.actions.push_back(nodes[static_cast<std::size_t>(chain[i])].action);
    }
    return p;
  };

  if (goal(init)) {
    OraclePlan p;
    p.trace.push_back(init);
    return p;
  }
  std::set<std::vector<std::uint8_t>> visited;
  visited.insert(init.to_bytes());
  nodes.push_back(Node{init, -1, ActionId{}, 0});
  std::deque<std::int64_t> frontier{0};
  const int locations = init.geom.locations();
  const int num_actions = locations * locations;

  while (!frontier.empty()) {
    const std::int64_t cur = frontier.front();
    frontier.pop_front();
    const int depth = nodes[static_cast<std::size_t>(cur)].depth;
    if (depth >= max_depth) continue;
    ++st.expanded;
    for (int flat = 0; flat < num_actions; ++flat) {
      const ActionId a = ActionId::from_flat(flat, locations);
      WorldState next = apply_action(nodes[static_cast<std::size_t>(cur)].state, a).first;
      ++st.generated;
      auto key = next.to_bytes();
      if (visited.count(key)) continue;
      visited.insert(std::move(key));
      nodes.push_back(Node{std::move(next), cur, a, depth + 1});
      const std::int64_t id = static_cast<std::int64_t>(nodes.size()) - 1;
      if (goal(nodes.back().state)) {
        st.visited = static_cast<std::int64_t>(visited.size());
        return reconstruct(id);
      }
      frontier.push_back(id);
    }
  }
  st.visited = static_cast<std::int64_t>(visited.size());
  return std::nullopt;
}

SymbolicState encode_world(const PerceptionModel<float>& perception, const WorldState& w) {
  const auto rendered = render(w);
  const auto codes = perception.encode(rendered.depth, rendered.masks);
  SymbolicState s;
  for (std::size_t i = 0; i < rendered.masks.size(); ++i)
    s.objects.emplace_back(rendered.masks[i].id, codes[i]);
  s.canonicalize();
  return s;
}

ExecutionReport execute_and_verify(const WorldState& init, const Plan& p, const Goal& goal,
                                   const PerceptionModel<float>& perception) {
  ExecutionReport report;
  WorldState w = init;
  report.world_trace.push_back(w);
  report.observed.push_back(encode_world(perception, w));
  for (const auto& a : p.actions) {
    w = apply_action(w, a).first;
    report.world_trace.push_back(w);
    report.observed.push_back(encode_world(perception, w));
  }
  for (std::size_t t = 0; t < report.observed.size() && t < p.trace.size(); ++t) {
    if (!(report.observed[t] == p.trace[t])) {
      report.divergence_step = static_cast<int>(t);
      break;
    }
  }
  report.success = goal.matches(report.observed.back());
  return report;
}

}  // namespace adsy
