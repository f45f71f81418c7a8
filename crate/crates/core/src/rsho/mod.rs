//! Three-layer control stack: an adaptive PID execution layer with a
//! damped-Jacobian arm, a UCB1 tree-search planner over symbolic rules, and a
//! circular-convolution candidate memory with a learned confidence ranker.

mod arm;
mod hyper;
mod pid;
mod planner;

pub use arm::{arm_step, damped_pseudo_inverse, wrap_angle, ArmState};
pub use hyper::{
    argmax, candidate_scores, memory_update, rank_candidates, ranking_loss, HyperMemory, Ranker, RankerGrad,
    RANKER_HIDDEN, RANK_MARGIN,
};
pub use pid::{
    adapt_gains, pid_action, Env, IntegratorPlant, PidController, QuadraticSurrogate, DEFAULT_NOISE_VAR, GAIN_MAX,
    INTEGRAL_CLAMP,
};
pub use planner::{
    plan, simulate, validate_plan, PlanOutcome, Rule, RuleSet, MAX_PREDICATES, ROLLOUT_DEPTH, UCB_C,
};
