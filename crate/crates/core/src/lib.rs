pub mod cli;
pub mod crnn;
pub mod dataio;
pub mod evalkit;
pub mod features;
pub mod losses;
pub mod numkit;
pub mod plg;
pub mod teacher;
