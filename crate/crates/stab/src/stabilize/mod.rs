//! Feedback synthesis and trajectory execution: partitions, the extremal
//! shift, parameter selection, shell tables, and stabilization verdicts.

pub mod feedback;
pub mod partition;
pub mod select;
pub mod shells;
pub mod trajectory;

pub use feedback::{
    extremal_shift_control, ControlDecision, FeedbackPolicy, GlobalFeedback, LocalFeedback,
    OpenLoopFeedback,
};
pub use partition::{make_partition, Partition, PartitionRule};
pub use select::{
    select_parameters, validate_parameters, InequalityCheck, SelectedParameters, SelectorOptions,
};
pub use shells::{build_shells, read_shells_csv, write_shells_csv, ShellParamSource, ShellRow, ShellTable};
pub use trajectory::{
    run_theta_trajectory, s_stabilization_check, KnotRecord, StabilizationVerdicts, TrajectoryLog,
    TrajectoryOptions, VerdictDetail, VerdictStatus,
};
