//! Failure categories and their exit codes.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Usage,
    Io,
    Data,
    Config,
    Training,
    Verification,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Usage => 2,
            Category::Verification => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Usage => "usage",
            Category::Io => "io",
            Category::Data => "data",
            Category::Config => "config",
            Category::Training => "training",
            Category::Verification => "verification",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct Categorized {
    pub category: Category,
    pub message: String,
}

pub fn fail(category: Category, message: impl Into<String>) -> anyhow::Error {
    Categorized { category, message: message.into() }.into()
}

pub trait CategoryExt<T> {
    fn category(self, category: Category) -> anyhow::Result<T>;
}

impl<T, E: fmt::Display> CategoryExt<T> for Result<T, E> {
    fn category(self, category: Category) -> anyhow::Result<T> {
        self.map_err(|e| fail(category, e.to_string()))
    }
}

/// Category of the outermost categorised cause, runtime I/O otherwise.
pub fn category_of(err: &anyhow::Error) -> Category {
    err.chain().find_map(|e| e.downcast_ref::<Categorized>()).map_or(Category::Io, |c| c.category)
}
