use std::fmt;

/// Stable diagnostic codes surfaced by loaders and analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Code {
    Malformed,
    UnsupportedVersion,
    InvalidCache,
    TooManyTasks,
    InvalidTask,
    DuplicateBlock,
    UnknownBlock,
    PageOutOfRange,
    LineOutOfRange,
    PageCountMismatch,
    EmptyBlock,
    UnreachableBlock,
    ExitUnreachable,
    EntryHasPredecessors,
    ExitHasSuccessors,
    IrreducibleCfg,
    UnboundedCycle,
    InvalidLoop,
    IncompleteColoring,
    BudgetOutOfRange,
    CheckPointCap,
    EmptyTable,
    InconsistentIds,
    CoefficientOverflow,
    OracleScope,
}

impl Code {
    pub fn as_str(self) -> &'static str {
        match self {
            Code::Malformed => "MALFORMED",
            Code::UnsupportedVersion => "UNSUPPORTED_VERSION",
            Code::InvalidCache => "INVALID_CACHE",
            Code::TooManyTasks => "TOO_MANY_TASKS",
            Code::InvalidTask => "INVALID_TASK",
            Code::DuplicateBlock => "DUPLICATE_BLOCK",
            Code::UnknownBlock => "UNKNOWN_BLOCK",
            Code::PageOutOfRange => "PAGE_OUT_OF_RANGE",
            Code::LineOutOfRange => "LINE_OUT_OF_RANGE",
            Code::PageCountMismatch => "PAGE_COUNT_MISMATCH",
            Code::EmptyBlock => "EMPTY_BLOCK",
            Code::UnreachableBlock => "UNREACHABLE_BLOCK",
            Code::ExitUnreachable => "EXIT_UNREACHABLE",
            Code::EntryHasPredecessors => "ENTRY_HAS_PREDECESSORS",
            Code::ExitHasSuccessors => "EXIT_HAS_SUCCESSORS",
            Code::IrreducibleCfg => "IRREDUCIBLE_CFG",
            Code::UnboundedCycle => "UNBOUNDED_CYCLE",
            Code::InvalidLoop => "INVALID_LOOP",
            Code::IncompleteColoring => "INCOMPLETE_COLORING",
            Code::BudgetOutOfRange => "BUDGET_OUT_OF_RANGE",
            Code::CheckPointCap => "CHECK_POINT_CAP",
            Code::EmptyTable => "EMPTY_TABLE",
            Code::InconsistentIds => "INCONSISTENT_IDS",
            Code::CoefficientOverflow => "COEFFICIENT_OVERFLOW",
            Code::OracleScope => "ORACLE_SCOPE",
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct Error {
    pub code: Code,
    pub message: String,
}

impl Error {
    pub fn new(code: Code, message: impl Into<String>) -> Self {
        Error {
            code,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! bail {
    ($code:expr, $($arg:tt)*) => {
        return Err($crate::error::Error::new($code, format!($($arg)*)))
    };
}
pub(crate) use bail;
