//! The secure training protocol, its wire format and transports, and the
//! plaintext oracle it is checked against.

pub mod config;
pub mod history;
pub mod message;
pub mod meter;
pub mod model;
pub mod oracle;
pub mod secure;
pub mod session;
pub mod transport;

pub use config::{GateInit, LayerSpec, TrainConfig};
pub use history::{mean_loss, run_training, BatchSampler, EarlyStop, Engine, History, RoundRecord};
pub use message::{CipherRows, EncVec, Message, MsgType, PlainRows};
pub use meter::{Bucket, CommMeter, Counter, Direction};
pub use model::{init_models, ClientModel, ServerModel, Snapshot};
pub use oracle::OracleTrainer;
pub use secure::SecureTrainer;
pub use session::{ClientSession, MaskDir, ServerSession};
pub use transport::{InProcTransport, TcpTransport, TranscriptEntry, Transport, Wire};
