//! Presentation-boundary codecs. Pure parse/compose; nothing here touches
//! the ledger.

pub mod app;
pub mod frame;
pub mod text;

pub use app::{AppInbound, AppOutbound, SyncPayload, VoucherView};
pub use frame::{decode_frame, encode_frame, read_frame, write_frame, AppFrame, FrameError, MAX_FRAME_PAYLOAD};
pub use text::{compose_text, parse_outbound, parse_text, reassemble, InboundText, OutboundText, ParseError, MAX_TEXT_LEN};
