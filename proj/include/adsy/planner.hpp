#pragma once

#include <functional>
#include <map>
#include <optional>

#include "adsy/forward_model.hpp"

namespace adsy {

// Order-free goal: a multiset of symbol codes the final state must match.
struct Goal {
  std::vector<SymbolCode> codes;  // kept sorted

  static Goal from_state(const SymbolicState& s) {
    Goal g;
    g.codes = s.code_multiset();
    return g;
  }
  static Goal from_codes(std::vector<SymbolCode> codes) {
    Goal g;
    g.codes = std::move(codes);
    std::sort(g.codes.begin(), g.codes.end());
    return g;
  }
  bool matches(const SymbolicState& s) const { return s.code_multiset() == codes; }
};

struct Plan {
  std::vector<ActionId> actions;
  std::vector<SymbolicState> trace;  // trace.size() == actions.size() + 1
};

struct PlanStats {
  std::int64_t expanded = 0;   // dequeued states
  std::int64_t generated = 0;  // transition evaluations
  std::int64_t visited = 0;    // deduplicated states seen
};

using TransitionFn = std::function<SymbolicState(const SymbolicState&, ActionId)>;

// Breadth-first search over the deterministic transition graph, branching
// over all locations^2 actions in flat order. Deduplication is by sorted code
// list, so the returned plan is a shortest one and ties resolve to the
// lexicographically smallest action sequence. Returns nothing if no state
// within max_depth matches.
std::optional<Plan> plan(const TransitionFn& next_state, const SymbolicState& init,
                         const Goal& goal, int locations, int max_depth,
                         PlanStats* stats = nullptr);

// Memoized learned-model transition for tree search.
class ForwardTransition {
 public:
  explicit ForwardTransition(const ForwardModel<float>& fwd) : fwd_(&fwd) {}
  SymbolicState operator()(const SymbolicState& s, ActionId a) const;

 private:
  const ForwardModel<float>* fwd_;
  mutable std::map<std::pair<std::vector<SymbolCode>, int>, std::vector<SymbolCode>> cache_;
};

struct OraclePlan {
  std::vector<ActionId> actions;
  std::vector<WorldState> trace;
};

// Same search over ground-truth simulator states; the planner's correctness
// oracle. Deduplication is by serialized world state.
std::optional<OraclePlan> plan_with_oracle(const WorldState& init,
                                           const std::function<bool(const WorldState&)>& goal,
                                           int max_depth, PlanStats* stats = nullptr);

// Encodes each object of a rendered world with the frozen perception model.
SymbolicState encode_world(const PerceptionModel<float>& perception, const WorldState& w);

struct ExecutionReport {
  bool success = false;
  std::vector<WorldState> world_trace;      // length = actions + 1
  std::vector<SymbolicState> observed;      // re-encoded codes per step
  std::optional<int> divergence_step;       // first step where prediction != observation
};

// Replays the plan in the simulator, re-encoding after every action, and
// reports where the predicted symbolic trace first diverges and whether the
// final state satisfies the goal.
ExecutionReport execute_and_verify(const WorldState& init, const Plan& p, const Goal& goal,
                                   const PerceptionModel<float>& perception);

}  // namespace adsy
