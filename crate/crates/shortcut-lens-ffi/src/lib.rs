pub use shortcut_lens as core;
