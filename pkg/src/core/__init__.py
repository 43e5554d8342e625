# Model parameter bundle 
