use std::fmt;

/// Failure class attached as context at stage boundaries; decides the
/// process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Numeric,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Numeric => 4,
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Config => "configuration error",
            Kind::Data => "data error",
            Kind::Numeric => "numeric failure",
        })
    }
}

pub trait KindExt<T> {
    fn kind(self, k: Kind) -> anyhow::Result<T>;
}

impl<T, E: Into<anyhow::Error>> KindExt<T> for Result<T, E> {
    fn kind(self, k: Kind) -> anyhow::Result<T> {
        self.map_err(|e| e.into().context(k))
    }
}

pub fn classify(err: &anyhow::Error) -> Kind {
    err.downcast_ref::<Kind>().copied().unwrap_or(Kind::Data)
}

pub fn config_err(msg: impl fmt::Display) -> anyhow::Error {
    anyhow::anyhow!("{msg}").context(Kind::Config)
}
