//! Independent reference implementations and criterion checks shared by
//! the integration suites and the acceptance target.
#![allow(dead_code)]

pub mod criteria;
pub mod oracle;
