//! Stage I: adapting the encoder so that image types bind to their prompts,
//! scenes stay distinguishable, and the fusion adapters map sources onto
//! the HRMS target.

mod losses;
mod train;

pub use losses::{intra_candidates, loss_fusion, loss_inter, loss_intra, IntraMode};
pub use train::{
    embed_triplets, modality_accuracy, same_type_cosines, train_stage1, Stage1Config, Stage1Log, Stage1Row,
    TripletEmbeddings, STAGE1_LOG_HEADER,
};
