pub mod apply;
pub mod parse;
pub mod pretrain;
