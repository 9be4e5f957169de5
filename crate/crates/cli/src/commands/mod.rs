mod amplify;
mod calibrate;
mod postselect;
mod simulate;
mod tune;
mod util;

pub use amplify::amplify;
pub use calibrate::calibrate;
pub use postselect::postselect;
pub use simulate::simulate;
pub use tune::tune;
