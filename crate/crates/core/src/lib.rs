pub mod bench;
pub mod denoise;
pub mod diag;
pub mod divest;
pub mod krylov;
pub mod linmodel;
pub mod seeding;
pub mod smp;
pub mod vecops;
