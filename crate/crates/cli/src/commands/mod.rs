mod ablate;
pub mod check;
mod gauss_tree;
pub mod inpaint;
mod pairs;

pub use ablate::cmd_ablate;
pub use check::cmd_check;
pub use gauss_tree::cmd_gauss_tree;
pub use inpaint::cmd_inpaint;
