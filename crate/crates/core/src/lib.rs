pub mod backend;
pub mod cli;
pub mod iosys;
pub mod record;
pub mod robot;
pub mod runtime;
