//! Shared vocabulary of views, relations, and task identities.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// One facet of the interaction data. Each view gets its own vocabulary,
/// co-occurrence graph, and embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum View {
    Item,
    Category,
    Shop,
}

impl View {
    pub const ALL: [View; 3] = [View::Item, View::Category, View::Shop];

    pub fn as_str(self) -> &'static str {
        match self {
            View::Item => "item",
            View::Category => "category",
            View::Shop => "shop",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "item" => Ok(View::Item),
            "category" => Ok(View::Category),
            "shop" => Ok(View::Shop),
            other => Err(Error::Config(format!("unknown view {other:?}"))),
        }
    }
}

/// A cross-view relation. Relations always originate at the item view:
/// each item carries at most one attribute in the target view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Relation {
    pub from: View,
    pub to: View,
}

impl Relation {
    pub fn new(from: View, to: View) -> Result<Self, Error> {
        if from != View::Item {
            return Err(Error::Config(format!(
                "relation must originate at the item view, got {from}"
            )));
        }
        if to == from {
            return Err(Error::Config("relation cannot target its own view".into()));
        }
        Ok(Relation { from, to })
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.from, self.to)
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let (from, to) = s
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("relation {s:?} is not of the form a-b")))?;
        Relation::new(from.parse()?, to.parse()?)
    }
}

/// Identity of one training task. The derived order (intra tasks first,
/// then inter tasks) is the deterministic iteration order used wherever
/// per-task values are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskId {
    Intra(View),
    Inter(Relation),
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskId::Intra(v) => write!(f, "intra:{v}"),
            TaskId::Inter(r) => write!(f, "inter:{r}"),
        }
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("task {s:?} is not of the form kind:name")))?;
        match kind {
            "intra" => Ok(TaskId::Intra(rest.parse()?)),
            "inter" => Ok(TaskId::Inter(rest.parse()?)),
            other => Err(Error::Config(format!("unknown task kind {other:?}"))),
        }
    }
}

/// Which cleaning and splitting rules apply to the raw log.
///
/// `Clicks` logs carry dwell times: short-dwell events are noise and
/// sessions break at short idle gaps. `Ratings` logs carry explicit
/// scores: low ratings are dropped, sessions break only at very long
/// gaps and are capped in length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetMode {
    Clicks,
    Ratings,
}

impl DatasetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetMode::Clicks => "clicks",
            DatasetMode::Ratings => "ratings",
        }
    }
}

impl fmt::Display for DatasetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "clicks" => Ok(DatasetMode::Clicks),
            "ratings" => Ok(DatasetMode::Ratings),
            other => Err(Error::Config(format!("unknown dataset mode {other:?}"))),
        }
    }
}
