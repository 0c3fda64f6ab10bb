//! Deterministic engine for agent-based social media simulation.
//!
//! Start with [`scenario::Simulation`]; the guide in `book/` walks through
//! each module.

pub mod actions;
pub mod agent;
pub mod analytics;
pub mod channel;
pub mod recsys;
pub mod rng;
pub mod scenario;
pub mod store;
pub mod time;
pub mod usergen;

// Compile and run the guide's snippets as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/store.md")]
    mod store {}
    #[doc = include_str!("../../../book/src/actions.md")]
    mod actions {}
    #[doc = include_str!("../../../book/src/recommendation.md")]
    mod recommendation {}
    #[doc = include_str!("../../../book/src/time.md")]
    mod time {}
    #[doc = include_str!("../../../book/src/agents.md")]
    mod agents {}
    #[doc = include_str!("../../../book/src/populations.md")]
    mod populations {}
    #[doc = include_str!("../../../book/src/analytics.md")]
    mod analytics {}
    #[doc = include_str!("../../../book/src/determinism.md")]
    mod determinism {}
}
