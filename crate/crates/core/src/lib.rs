pub mod config;
pub mod domain;
pub mod kpi;
pub mod lp;
pub mod milp;
pub mod profiles;
pub mod scheduler;
pub mod secondary;
pub mod simloop;
