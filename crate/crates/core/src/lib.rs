pub mod copilot;
pub mod env;
pub mod guardian;
pub mod harness;
pub mod learner;
pub mod numeric;
pub mod theory;
