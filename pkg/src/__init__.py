# RUPNet segmentation toolkit
